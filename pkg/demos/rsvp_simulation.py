"""
Simulating the attentional blink
================================

In an RSVP trial a second target (T2) follows the first after a short or long
lag. The attentional-blink magnitude is P(T2 correct | lag 8) minus
P(T2 correct | lag 2). A simulated observer detects T2 as a Bernoulli draw.
"""

import numpy as np

from abm_pipeline.synth import ObserverParams, compute_abm, simulate_rsvp

p2, p8 = 0.55, 0.9
print(f"true ABM = {compute_abm(p8, p2):.3f}")

# %%
# The estimate tightens as the number of trials per lag grows, roughly as
# one over the square root of the trial count.
print("\ntrials  mean estimate  sd over 200 seeds  binomial sd")
for trials in (20, 100, 1000, 10000):
    est = [simulate_rsvp(ObserverParams(p2, p8, trials, seed)).empirical_abm for seed in range(200)]
    theory = np.sqrt((p2 * (1 - p2) + p8 * (1 - p8)) / trials)
    print(f"{trials:6d}  {np.mean(est):13.3f}  {np.std(est):17.4f}  {theory:11.4f}")

# %%
# The same seed always gives the same trial outcomes.
a = simulate_rsvp(ObserverParams(p2, p8, 100, seed=7))
b = simulate_rsvp(ObserverParams(p2, p8, 100, seed=7))
print(f"\nseed 7 twice: {a.correct_lag2}/{a.correct_lag8} and {b.correct_lag2}/{b.correct_lag8}")
