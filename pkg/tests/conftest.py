from types import MappingProxyType

import numpy as np
import pytest

from abm_pipeline.cnn import Architecture, ConvLayerSpec
from abm_pipeline.core import LAYERS, RoiId
from abm_pipeline.pipeline import CvConfig, train_two_stage
from abm_pipeline.regress import DEFAULT_LAMBDA_GRID
from abm_pipeline.synth import SynthConfig, gen_synthetic_dataset

# 3x19x19 input; same layer pattern as AlexNet at toy width
TINY_ARCH = Architecture(
    input_size=19,
    in_channels=3,
    convs=(
        ConvLayerSpec(4, 3, stride=2, padding=0, pool=(3, 2)),
        ConvLayerSpec(6, 3, stride=1, padding=1, pool=(2, 1)),
        ConvLayerSpec(5, 3, stride=1, padding=1),
        ConvLayerSpec(5, 3, stride=1, padding=1),
        ConvLayerSpec(4, 3, stride=1, padding=1, pool=(2, 2)),
    ),
    fc_units=(7, 6),
)

SMALL_VOXELS = MappingProxyType({r: (12 if r.name.startswith("V") else 16) for r in RoiId.atomic()})


def small_config(**overrides) -> SynthConfig:
    """A few-second dataset: 32 features/layer, 12-16 voxels/ROI."""
    base = dict(
        voxels=SMALL_VOXELS,
        feature_lengths={l: 32 for l in LAYERS},
        n_stage1=150,
        n_stage2=41,
        n_test=50,
        latent_dim=4,
        seed=0,
    )
    base.update(overrides)
    return SynthConfig(**base)


# noiseless data is rank deficient (latent_dim < voxels), so lambda = 0 itself is singular
NEAR_EXACT_CV = CvConfig(lambda_grid=(1e-8,) + DEFAULT_LAMBDA_GRID)


def train_on(ds, cv=CvConfig()):
    return train_two_stage(
        ds.fmri["stage1-train"],
        ds.features["stage1-train"],
        ds.features["stage2-train"],
        ds.abm["stage2-train"],
        cv,
    )


@pytest.fixture(scope="session")
def noiseless_small():
    """Zero-noise data; the grid reaches down to 1e-8 so the exact fit is (nearly) unpenalised."""
    ds = gen_synthetic_dataset(small_config(fmri_noise_sigma=0.0, abm_noise_sigma=0.0))
    return ds, train_on(ds, NEAR_EXACT_CV)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
