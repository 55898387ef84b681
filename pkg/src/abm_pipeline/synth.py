"""Attentional-blink magnitude, an RSVP trial simulator, and a synthetic dataset
generator with known ground truth.

Generative model of :func:`gen_synthetic_dataset` (all draws from one seeded
``numpy.random.Generator`` in a fixed order):

* every image has a latent vector ``z ~ N(0, I_r)``; layer features are
  ``f_l = B_l z`` with ``B_l`` of shape (feature_length, r), entries
  ``N(0, 1/r)``, so every feature has unit variance;
* atomic ROI voxels are ``A_roi f_wired(roi) + eps`` with ``A_roi`` entries
  ``N(0, 1/feature_length)`` and ``eps ~ N(0, fmri_noise_sigma^2)``;
  composite ROIs are concatenations of their parts;
* raw ABM is ``w . f_source + eta`` where ``w`` lies in the column space of
  ``B_source`` and is scaled so that ``w . f_source`` has unit variance;
  raw values are then mapped affinely onto [-1, 1];
* the animal/object groups are drawn from the test images as matched pairs
  (adjacent in ground-truth ABM signal), and object features at the source
  layer are moved by ``category_shift * w / |w|^2``, which raises their raw
  ABM signal by ``category_shift`` standard deviations.

Because every layer is a linear image of the same latent, any ROI with at
least ``r`` voxels determines every layer's features exactly when noise is
zero, and larger (composite) ROIs average out more voxel noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .core import (
    LAYERS,
    SPLITS,
    DataError,
    LayerId,
    Manifest,
    RoiId,
    Table,
    write_matrix_csv,
    write_table,
)

# --------------------------------------------------------------------------
# attentional blink magnitude


def compute_abm(p_lag8: float, p_lag2: float) -> float:
    """ABM = P(T2 correct | lag 8) - P(T2 correct | lag 2)."""
    for name, p in (("p_lag8", p_lag8), ("p_lag2", p_lag2)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must be a probability, got {p}")
    return float(p_lag8) - float(p_lag2)


@dataclass(frozen=True)
class ObserverParams:
    p_correct_lag2: float
    p_correct_lag8: float
    trials_per_lag: int = 100
    seed: int = 0

    def __post_init__(self):
        for p in (self.p_correct_lag2, self.p_correct_lag8):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probabilities must lie in [0, 1], got {p}")
        if self.trials_per_lag < 1:
            raise ValueError("trials_per_lag must be at least 1")


@dataclass(frozen=True)
class RsvpResult:
    empirical_abm: float
    correct_lag2: int
    correct_lag8: int
    trials_per_lag: int


def simulate_rsvp(params: ObserverParams) -> RsvpResult:
    """Bernoulli T2 detections per trial; lag-2 trials are drawn before lag-8 trials."""
    rng = np.random.default_rng(params.seed)
    n = params.trials_per_lag
    hits2 = int(np.count_nonzero(rng.random(n) < params.p_correct_lag2))
    hits8 = int(np.count_nonzero(rng.random(n) < params.p_correct_lag8))
    return RsvpResult(compute_abm(hits8 / n, hits2 / n), hits2, hits8, n)


# --------------------------------------------------------------------------
# synthetic dataset

DEFAULT_VOXELS = MappingProxyType(
    {
        RoiId.V1: 120,
        RoiId.V2: 120,
        RoiId.V3: 120,
        RoiId.V4: 120,
        RoiId.LOC: 180,
        RoiId.FFA: 180,
        RoiId.PPA: 180,
    }
)

DEFAULT_WIRING = MappingProxyType(
    {
        RoiId.V1: LayerId.Conv1,
        RoiId.V2: LayerId.Conv2,
        RoiId.V3: LayerId.Conv3,
        RoiId.V4: LayerId.Conv4,
        RoiId.LOC: LayerId.Conv5,
        RoiId.FFA: LayerId.Fc6,
        RoiId.PPA: LayerId.Fc7,
    }
)

DESK_FEATURE_LENGTH = 256
CATEGORIES = ("animal", "object")


@dataclass(frozen=True)
class SynthConfig:
    voxels: Mapping[RoiId, int] = DEFAULT_VOXELS
    feature_lengths: Mapping[LayerId, int] = field(
        default_factory=lambda: MappingProxyType({l: DESK_FEATURE_LENGTH for l in LAYERS})
    )
    n_stage1: int = 1200
    n_stage2: int = 41
    n_test: int = 50
    fmri_noise_sigma: float = 0.3
    abm_noise_sigma: float = 0.1
    abm_source_layer: LayerId = LayerId.Conv3
    category_shift: float = 0.0
    category_size: int = 12
    latent_dim: int = 8
    seed: int = 0

    def __post_init__(self):
        if set(self.voxels) != set(RoiId.atomic()):
            raise ValueError("voxel counts must be given for exactly the atomic ROIs")
        if set(self.feature_lengths) != set(LAYERS):
            raise ValueError("feature lengths must be given for every layer")
        if min(self.voxels.values()) < 1 or min(self.feature_lengths.values()) < 1:
            raise ValueError("voxel counts and feature lengths must be positive")
        if min(self.n_stage1, self.n_stage2, self.n_test) < 1:
            raise ValueError("split sizes must be positive")
        if self.fmri_noise_sigma < 0 or self.abm_noise_sigma < 0:
            raise ValueError("noise levels must be non-negative")
        if self.category_size < 1 or 2 * self.category_size > self.n_test:
            raise ValueError("need 2 * category_size <= n_test")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if self.latent_dim > min(self.voxels.values()) or self.latent_dim > min(self.feature_lengths.values()):
            raise ValueError("latent_dim may not exceed any voxel count or feature length")

    def roi_voxels(self, roi: RoiId) -> int:
        return sum(self.voxels[r] for r in roi.composition)

    def to_json(self) -> dict:
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        doc["voxels"] = {r.name: n for r, n in self.voxels.items()}
        doc["feature_lengths"] = {l.name: n for l, n in self.feature_lengths.items()}
        doc["abm_source_layer"] = self.abm_source_layer.name
        return doc

    @classmethod
    def desk(cls, **overrides) -> "SynthConfig":
        """Small splits (300/41/50) for quick runs."""
        return cls(**{"n_stage1": 300, **overrides})


@dataclass
class GroundTruth:
    roi_maps: dict[RoiId, np.ndarray]  # atomic ROI -> voxels x feature_length
    layer_bases: dict[LayerId, np.ndarray]  # feature_length x latent_dim
    abm_weights: np.ndarray  # feature_length of the source layer
    fmri_noise: dict[str, dict[RoiId, Table]]
    abm_noise: dict[str, Table]
    abm_offset: float
    abm_scale: float
    wiring: Mapping[RoiId, LayerId]
    source_layer: LayerId
    category_shift: float

    @property
    def expected_difference_sign(self) -> int:
        """Sign of (animal - object) ABM at the source layer implied by the shift."""
        return int(-np.sign(self.category_shift))


@dataclass
class SyntheticDataset:
    config: SynthConfig
    splits: dict[str, tuple[str, ...]]
    features: dict[str, dict[LayerId, Table]]
    fmri: dict[str, dict[RoiId, Table]]
    abm: dict[str, Table]
    categories: dict[str, tuple[str, ...]]
    category_features: dict[str, dict[LayerId, Table]]
    truth: GroundTruth

    def write(self, out_dir) -> Path:
        """Write every table, the ground-truth sidecar and ``manifest.json``."""
        out = Path(out_dir)
        manifest = Manifest(root=out)
        for split in SPLITS:
            manifest.features[split] = {}
            for layer, table in self.features[split].items():
                rel = f"features/{split}/{layer.name}.csv"
                _write(out / rel, table)
                manifest.features[split][layer] = rel
            manifest.fmri[split] = {}
            for roi, table in self.fmri[split].items():
                rel = f"fmri/{split}/{roi.name}.csv"
                _write(out / rel, table)
                manifest.fmri[split][roi] = rel
        for split, table in self.abm.items():
            rel = f"abm/{split}.csv"
            _write(out / rel, table, ["abm"])
            manifest.abm[split] = rel
        manifest.splits = {s: list(ids) for s, ids in self.splits.items()}
        manifest.categories = {g: list(ids) for g, ids in self.categories.items()}
        for group, tables in self.category_features.items():
            manifest.category_features[group] = {}
            for layer, table in tables.items():
                rel = f"categories/{group}/{layer.name}.csv"
                _write(out / rel, table)
                manifest.category_features[group][layer] = rel
        manifest.ground_truth = "ground_truth"
        self._write_truth(out / "ground_truth")
        return manifest.save(out / "manifest.json")

    def _write_truth(self, gt: Path) -> None:
        t = self.truth
        gt.mkdir(parents=True, exist_ok=True)
        for roi, A in t.roi_maps.items():
            write_matrix_csv(gt / f"roi_map_{roi.name}.csv", [f"v{i}" for i in range(A.shape[0])], A)
        for layer, B in t.layer_bases.items():
            write_matrix_csv(gt / f"layer_basis_{layer.name}.csv", [f"f{i}" for i in range(B.shape[0])], B)
        write_matrix_csv(gt / "abm_weights.csv", ["w"], t.abm_weights.reshape(1, -1))
        for split, tables in t.fmri_noise.items():
            for roi, table in tables.items():
                _write(gt / "fmri_noise" / split / f"{roi.name}.csv", table)
        for split, table in t.abm_noise.items():
            _write(gt / "abm_noise" / f"{split}.csv", table, ["eta"])
        doc = {
            "config": self.config.to_json(),
            "wiring": {r.name: l.name for r, l in t.wiring.items()},
            "abm_source_layer": t.source_layer.name,
            "abm_offset": t.abm_offset,
            "abm_scale": t.abm_scale,
            "category_shift": t.category_shift,
            "expected_difference_sign": t.expected_difference_sign,
            "recipe": {
                "fmri": "voxels[roi] = features[wiring[roi]] @ roi_map[roi].T + fmri_noise[roi]",
                "composite": "voxels[composite] = concat(voxels[part] for part in composition)",
                "abm": "abm = (features[abm_source_layer] @ abm_weights + abm_noise - abm_offset) / abm_scale",
                "category": "object features[abm_source_layer] += category_shift * w / (w @ w)",
            },
        }
        (gt / "truth.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _write(path: Path, table: Table, columns=None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    write_table(path, table, columns)


def _split_ids(config: SynthConfig) -> dict[str, tuple[str, ...]]:
    sizes = {"stage1-train": config.n_stage1, "stage2-train": config.n_stage2, "test": config.n_test}
    prefix = {"stage1-train": "a", "stage2-train": "b", "test": "t"}
    return {s: tuple(f"{prefix[s]}{i:05d}" for i in range(n)) for s, n in sizes.items()}


def gen_synthetic_dataset(config: SynthConfig, out_dir=None) -> SyntheticDataset:
    """Generate a dataset in memory; also write it to ``out_dir`` when given."""
    rng = np.random.default_rng(config.seed)
    r = config.latent_dim
    wiring = DEFAULT_WIRING
    lengths = config.feature_lengths

    bases = {l: rng.standard_normal((lengths[l], r)) / np.sqrt(r) for l in LAYERS}
    roi_maps = {
        roi: rng.standard_normal((config.voxels[roi], lengths[wiring[roi]])) / np.sqrt(lengths[wiring[roi]])
        for roi in RoiId.atomic()
    }
    src = config.abm_source_layer
    w = bases[src] @ rng.standard_normal(r)
    w /= np.linalg.norm(bases[src].T @ w)

    ids = _split_ids(config)
    features: dict[str, dict[LayerId, Table]] = {}
    fmri: dict[str, dict[RoiId, Table]] = {}
    fmri_noise: dict[str, dict[RoiId, Table]] = {}
    raw_signal: dict[str, np.ndarray] = {}
    abm_noise: dict[str, Table] = {}
    for split in SPLITS:
        n = len(ids[split])
        z = rng.standard_normal((n, r))
        feats = {l: z @ bases[l].T for l in LAYERS}
        features[split] = {l: Table(ids[split], feats[l]) for l in LAYERS}
        atomic = {}
        fmri_noise[split] = {}
        for roi in RoiId.atomic():
            eps = config.fmri_noise_sigma * rng.standard_normal((n, config.voxels[roi]))
            atomic[roi] = feats[wiring[roi]] @ roi_maps[roi].T + eps
            fmri_noise[split][roi] = Table(ids[split], eps)
        fmri[split] = {
            roi: Table(ids[split], np.hstack([atomic[p] for p in roi.composition])) for roi in RoiId
        }
        raw_signal[split] = feats[src] @ w
        if split != "stage1-train":
            abm_noise[split] = Table(ids[split], config.abm_noise_sigma * rng.standard_normal(n))

    labelled = [s for s in SPLITS if s in abm_noise]
    raw = {s: raw_signal[s] + abm_noise[s].values[:, 0] for s in labelled}
    everything = np.concatenate([raw[s] for s in labelled])
    lo, hi = everything.min(), everything.max()
    offset = 0.5 * (lo + hi)
    scale = 0.5 * (hi - lo) if hi > lo else 1.0
    abm = {s: Table(ids[s], (raw[s] - offset) / scale) for s in labelled}

    categories = _matched_categories(ids["test"], raw_signal["test"], config.category_size, rng)
    shift = config.category_shift * w / (w @ w)
    category_features = {}
    for group, members in categories.items():
        tables = {l: features["test"][l].subset(members) for l in LAYERS}
        if group == "object":
            tables[src] = Table(members, tables[src].values + shift)
        category_features[group] = tables

    truth = GroundTruth(
        roi_maps=roi_maps,
        layer_bases=bases,
        abm_weights=w,
        fmri_noise=fmri_noise,
        abm_noise=abm_noise,
        abm_offset=float(offset),
        abm_scale=float(scale),
        wiring=wiring,
        source_layer=src,
        category_shift=float(config.category_shift),
    )
    dataset = SyntheticDataset(config, ids, features, fmri, abm, categories, category_features, truth)
    if out_dir is not None:
        try:
            dataset.write(out_dir)
        except OSError as exc:
            raise DataError(f"cannot write dataset to {out_dir}: {exc}") from exc
    return dataset


def _matched_categories(ids, signal, size, rng) -> dict[str, tuple[str, ...]]:
    """Pick ``size`` pairs of images adjacent in ABM signal; one of each pair per group."""
    order = np.argsort(signal, kind="stable")
    pairs = order[: 2 * (len(order) // 2)].reshape(-1, 2)
    chosen = np.sort(rng.choice(len(pairs), size=size, replace=False))
    flips = rng.integers(0, 2, size=size)
    animal = [ids[pairs[p, f]] for p, f in zip(chosen, flips)]
    obj = [ids[pairs[p, 1 - f]] for p, f in zip(chosen, flips)]
    return {"animal": tuple(sorted(animal)), "object": tuple(sorted(obj))}
