"""
AlexNet features without a deep-learning framework
==================================================

The CNN is a plain numpy forward pass. Features are taken after each ReLU and
before pooling, so Conv1 yields 96 x 55 x 55 = 290400 values per image.
Weights here are seeded random draws rather than trained parameters; the
pipeline only needs a fixed, reproducible feature map.
"""

import time

import numpy as np

from abm_pipeline.cnn import ALEXNET, NetworkWeights, average_features, forward_features
from abm_pipeline.core import LAYERS, ImageTensor

# %%
# Layer geometry follows directly from the architecture description.
for layer, shape in ALEXNET.layer_shapes().items():
    print(f"{layer.name:5s} {str(shape):16s} {int(np.prod(shape)):7d} values")

# %%
# One seeded network, three random images. A single forward pass returns
# every requested layer at once.
start = time.perf_counter()
weights = NetworkWeights.initialize(seed=0)
rng = np.random.default_rng(0)
images = [ImageTensor(rng.random((3, 227, 227)), f"img{i}") for i in range(3)]
features = [forward_features(img, weights, LAYERS) for img in images]
print(f"\nweights + 3 images in {time.perf_counter() - start:.1f} s")

# %%
# Post-ReLU features are non-negative and partly sparse.
print("\nlayer  fraction of zeros")
for layer in LAYERS:
    zeros = np.mean([np.mean(f[layer].values == 0) for f in features])
    print(f"{layer.name:5s}  {zeros:.2f}")

# %%
# Category averages are element-wise means of feature vectors.
fc7 = average_features([f[LAYERS[-1]] for f in features], label="three images")
print(f"\naveraged Fc7 vector: length {fc7.values.size}, mean {fc7.values.mean():.4f}")
