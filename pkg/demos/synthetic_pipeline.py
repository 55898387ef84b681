"""
Two-stage ABM prediction on synthetic data
==========================================

Voxel responses are mapped to CNN features (stage 1), and features are mapped
to attentional-blink magnitude (stage 2). A synthetic dataset with known
ground truth lets us check both the wiring and the qualitative finding that
larger, composite brain regions predict better than their parts.
"""

import numpy as np

from abm_pipeline.core import LAYERS, RoiId
from abm_pipeline.pipeline import CvConfig, evaluate_rois, train_two_stage
from abm_pipeline.synth import SynthConfig, gen_synthetic_dataset

# %%
# A reduced dataset: 64 features per layer keeps this demo to a few seconds.
# Voxel noise is on, so stage 1 cannot be exact.
config = SynthConfig(
    feature_lengths={layer: 64 for layer in LAYERS},
    n_stage1=200,
    fmri_noise_sigma=0.3,
    seed=1,
)
ds = gen_synthetic_dataset(config)
for split, ids in ds.splits.items():
    print(f"{split:13s} {len(ids):5d} images")

# %%
# Train all 70 stage-1 models (10 ROIs x 7 layers) and 7 stage-2 models.
# Ridge penalties are picked per model by 5-fold cross-validation.
model = train_two_stage(
    ds.fmri["stage1-train"],
    ds.features["stage1-train"],
    ds.features["stage2-train"],
    ds.abm["stage2-train"],
    CvConfig(),
)
print(f"\n{len(model.stage1)} stage-1 models, {len(model.stage2)} stage-2 models")

# %%
# The direct prediction (stage 2 on true features) is the reference. Each
# ROI's indirect prediction goes through its own decoded features, and the
# MSE between the two is averaged over images and layers.
report = evaluate_rois(ds.fmri["test"], ds.features["test"], model)
print("\nROI    MSE vs direct")
for roi in RoiId:
    tag = "" if roi.is_atomic else "  (" + "+".join(p.name for p in roi.composition) + ")"
    print(f"{roi.name:5s}  {report.roi_mse[roi]:.2e}{tag}")

atomic = np.mean([report.roi_mse[r] for r in RoiId.atomic()])
composite = np.mean([report.roi_mse[r] for r in (RoiId.LVC, RoiId.HVC, RoiId.VC)])
print(f"\natomic mean {atomic:.2e}   LVC/HVC/VC mean {composite:.2e}")

# %%
# Average predicted ABM per layer across the 50 test images.
print("\nlayer  mean ABM (direct)")
for layer, value in report.layer_means().items():
    print(f"{layer.name:5s}  {value:+.3f}")
