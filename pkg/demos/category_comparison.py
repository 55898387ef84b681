"""
Comparing two image categories layer by layer
=============================================

Two groups of 12 test images are averaged in feature space and passed through
each layer's stage-2 model. The synthetic generator can move one group along
the ABM direction of a single layer (Conv3 by default), so the comparison
should flag that layer and leave the others near zero.
"""

import tempfile
from pathlib import Path

from abm_pipeline.core import LAYERS, Manifest
from abm_pipeline.pipeline import TwoStageModel, compare_categories, train_stage2
from abm_pipeline.synth import SynthConfig, gen_synthetic_dataset

# %%
# Write the dataset to disk and read the groups back through the manifest,
# the same way the command-line tool does.
config = SynthConfig.desk(feature_lengths={l: 64 for l in LAYERS}, category_shift=1.0, seed=2)
with tempfile.TemporaryDirectory() as tmp:
    ds = gen_synthetic_dataset(config, Path(tmp) / "data")
    manifest = Manifest.load(Path(tmp) / "data" / "manifest.json")
    animal = manifest.load_category_features("animal")
    obj = manifest.load_category_features("object")
print(f"animal: {len(manifest.categories['animal'])} images, object: {len(manifest.categories['object'])} images")

# %%
# Only stage 2 is needed: the comparison runs on true features.
model = TwoStageModel({}, train_stage2(ds.features["stage2-train"], ds.abm["stage2-train"]))
comparison = compare_categories(animal, obj, model)

print("\nlayer  animal   object   difference")
for layer, animal_abm, object_abm, diff in comparison.records():
    print(f"{layer:5s}  {animal_abm:+.3f}  {object_abm:+.3f}  {diff:+.3f}")
print(f"\nexpected sign at {config.abm_source_layer.name}: {ds.truth.expected_difference_sign:+d}")
