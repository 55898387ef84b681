"""
Ridge regression and lambda selection
=====================================

Both stages use multi-output ridge regression on z-scored inputs. With more
inputs than samples (typical for voxels to CNN features) the dual, n x n
system is solved instead of the d x d one. Both give the same weights.
"""

import numpy as np

from abm_pipeline.regress import fit_ridge, fit_ridge_cv, kfold_cv

rng = np.random.default_rng(3)

# %%
# A wide problem: 100 samples, 200 inputs, 3 outputs with a sparse true map.
n, d, k = 100, 200, 3
X = rng.standard_normal((n, d))
W_true = np.zeros((k, d))
W_true[:, :10] = rng.standard_normal((k, 10))
Y = X @ W_true.T + 2.0 * rng.standard_normal((n, k))

primal = fit_ridge(X, Y, 10.0, solver="primal")
dual = fit_ridge(X, Y, 10.0, solver="dual")
print(f"max |primal - dual| weight gap: {np.abs(primal.weights - dual.weights).max():.1e}")

# %%
# Cross-validated MSE over the default grid 1e-3 .. 1e5. Folds are fixed by
# a seed, so the curve is reproducible.
report = kfold_cv(X, Y, seed=0)
print("\nlambda      CV MSE")
for lam, err in zip(report.lambda_grid, report.mean_mse):
    marker = "  <- selected" if lam == report.selected_lambda else ""
    print(f"{lam:9.0e}  {err:8.4f}{marker}")

# %%
# Refit on all rows with the selected penalty and check on fresh data.
model = fit_ridge_cv(X, Y, seed=0)
X_new = rng.standard_normal((500, d))
Y_new = X_new @ W_true.T
print(f"\nheld-out MSE at lambda={model.lam:g}: {np.mean((model.predict(X_new) - Y_new) ** 2):.3f}")
print(f"mean predictor MSE:            {np.mean((Y_new - Y.mean(axis=0)) ** 2):.3f}")

# %%
# Predicting at the training mean returns the training target mean exactly.
print("\npredict(mean X) - mean Y:", model.predict(X.mean(axis=0)) - Y.mean(axis=0))
