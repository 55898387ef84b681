"""Two-stage ABM model: fMRI -> layer features (stage 1), layer features -> ABM (stage 2).

Direct predictions run stage 2 on true image features; indirect predictions
chain stage 1 and stage 2 starting from an ROI's voxels. Rows are always
aligned by image id and processed in sorted-id order.
"""

from __future__ import annotations

import contextlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .core import (
    LAYERS,
    ROIS,
    AbmRecord,
    DataError,
    FeatureVector,
    FmriRecord,
    LayerId,
    RoiId,
    Table,
    read_matrix_csv,
    write_matrix_csv,
    write_records_csv,
)
from .cnn import average_features
from .regress import DEFAULT_FOLDS, DEFAULT_LAMBDA_GRID, RegressionModel, fit_ridge_cv, mse


@dataclass(frozen=True)
class CvConfig:
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    folds: int = DEFAULT_FOLDS
    seed: int = 0
    threads: int = 1


@contextlib.contextmanager
def single_threaded():
    """Pin BLAS/OpenMP pools to one thread so results are bitwise reproducible."""
    with threadpool_limits(limits=1):
        yield


def _run_jobs(jobs: Mapping[Hashable, Callable[[], object]], threads: int) -> dict:
    keys = list(jobs)
    if threads <= 1:
        return {k: jobs[k]() for k in keys}
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(lambda k: jobs[k](), keys))
    return dict(zip(keys, results))


def _reference_ids(tables: Mapping, ids: Sequence[str] | None) -> tuple[str, ...]:
    if ids is not None:
        return tuple(sorted(ids))
    union: set[str] = set()
    for t in tables.values():
        union.update(t.ids)
    return tuple(sorted(union))


def _aligned(tables: Mapping, ids: Sequence[str], kind: str) -> dict:
    out = {}
    for key, table in tables.items():
        name = key.name if hasattr(key, "name") else str(key)
        out[key] = table.align(ids, what=f"{kind} {name}")
    return out


# --------------------------------------------------------------------------
# model


@dataclass
class TwoStageModel:
    stage1: dict[tuple[RoiId, LayerId], RegressionModel] = field(default_factory=dict)
    stage2: dict[LayerId, RegressionModel] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def stage1_model(self, roi: RoiId, layer: LayerId) -> RegressionModel:
        try:
            return self.stage1[(roi, layer)]
        except KeyError:
            raise DataError(f"no stage-1 model for ROI {roi.name}, layer {layer.name}") from None

    def stage2_model(self, layer: LayerId) -> RegressionModel:
        try:
            return self.stage2[layer]
        except KeyError:
            raise DataError(f"no stage-2 model for layer {layer.name}") from None

    @property
    def layers(self) -> list[LayerId]:
        return [l for l in LAYERS if l in self.stage2]

    @property
    def rois(self) -> list[RoiId]:
        present = {r for r, _ in self.stage1}
        return [r for r in ROIS if r in present]

    def save(self, directory) -> Path:
        directory = Path(directory)
        (directory / "stage1").mkdir(parents=True, exist_ok=True)
        (directory / "stage2").mkdir(parents=True, exist_ok=True)
        cv_rows, fold_rows = [], []
        for name, m in self._named_models():
            save_model_csv(directory / f"{name}.csv", m)
            if m.cv is not None:
                cv_rows.append((name, m.cv.selected_lambda, float(m.cv.mean_mse[m.cv.lambda_grid.index(m.cv.selected_lambda)])))
                for g, lam in enumerate(m.cv.lambda_grid):
                    for f in range(m.cv.folds):
                        fold_rows.append((name, lam, f, float(m.cv.fold_mse[g, f])))
        write_records_csv(directory / "cv_report.csv", ["model", "selected_lambda", "cv_mse"], cv_rows)
        write_records_csv(directory / "cv_folds.csv", ["model", "lambda", "fold", "mse"], fold_rows)
        train_mse = self.metadata.get("train_mse", {})
        write_records_csv(
            directory / "train_report.csv",
            ["model", "lambda", "train_mse"],
            [(name, m.lam, float(train_mse.get(name, float("nan")))) for name, m in self._named_models()],
        )
        (directory / "metadata.json").write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")
        return directory

    @classmethod
    def load(cls, directory) -> "TwoStageModel":
        directory = Path(directory)
        meta_path = directory / "metadata.json"
        if not meta_path.is_file():
            raise DataError(f"{directory}: not a model directory (missing metadata.json)")
        model = cls(metadata=json.loads(meta_path.read_text()))
        for path in sorted((directory / "stage1").glob("*.csv")):
            roi, layer = path.stem.split("__")
            model.stage1[(RoiId.parse(roi), LayerId.parse(layer))] = load_model_csv(path)
        for path in sorted((directory / "stage2").glob("*.csv")):
            model.stage2[LayerId.parse(path.stem)] = load_model_csv(path)
        return model

    def _named_models(self):
        for (roi, layer), m in sorted(self.stage1.items(), key=lambda kv: (ROIS.index(kv[0][0]), LAYERS.index(kv[0][1]))):
            yield f"stage1/{roi.name}__{layer.name}", m
        for layer, m in sorted(self.stage2.items(), key=lambda kv: LAYERS.index(kv[0])):
            yield f"stage2/{layer.name}", m


def save_model_csv(path, model: RegressionModel) -> None:
    """Layout: rows ``input_mean`` (last column lambda), ``input_scale``, then
    ``out<j>`` holding output j's weights with its bias in the last column."""
    d = model.n_inputs
    rows = np.empty((2 + model.n_outputs, d + 1))
    rows[0, :d], rows[0, d] = model.input_mean, model.lam
    rows[1, :d], rows[1, d] = model.input_scale, 0.0
    rows[2:, :d], rows[2:, d] = model.weights, model.bias
    ids = ["input_mean", "input_scale", *[f"out{j}" for j in range(model.n_outputs)]]
    write_matrix_csv(path, ids, rows)


def load_model_csv(path) -> RegressionModel:
    ids, rows = read_matrix_csv(path)
    if len(ids) < 3 or ids[:2] != ["input_mean", "input_scale"]:
        raise DataError(f"{path}: not a regression model file")
    return RegressionModel(
        weights=rows[2:, :-1],
        bias=rows[2:, -1],
        lam=float(rows[0, -1]),
        input_mean=rows[0, :-1],
        input_scale=rows[1, :-1],
        target_mean=rows[2:, -1],
    )


# --------------------------------------------------------------------------
# training


def train_stage1(
    fmri: Mapping[RoiId, Table],
    features: Mapping[LayerId, Table],
    cv: CvConfig = CvConfig(),
    ids: Sequence[str] | None = None,
    train_mse: dict | None = None,
) -> dict[tuple[RoiId, LayerId], RegressionModel]:
    """Fit one voxels -> features model per (ROI, layer) pair."""
    if not fmri or not features:
        raise DataError("stage 1 needs at least one ROI and one layer")
    ids = _reference_ids({**{("fmri", r): t for r, t in fmri.items()}, **{("feat", l): t for l, t in features.items()}}, ids)
    if len(ids) < cv.folds:
        raise DataError(f"stage 1 has {len(ids)} images, fewer than {cv.folds} folds")
    X = _aligned(fmri, ids, "fMRI ROI")
    Y = _aligned(features, ids, "features layer")
    rois = [r for r in ROIS if r in fmri]
    layers = [l for l in LAYERS if l in features]
    jobs = {
        (r, l): (lambda r=r, l=l: fit_ridge_cv(X[r], Y[l], cv.lambda_grid, cv.folds, cv.seed, ids))
        for r in rois
        for l in layers
    }
    models = _run_jobs(jobs, cv.threads)
    if train_mse is not None:
        for (r, l), m in models.items():
            train_mse[f"stage1/{r.name}__{l.name}"] = mse(m.predict(X[r]), Y[l])
    return models


def train_stage2(
    features: Mapping[LayerId, Table],
    abm: Table,
    cv: CvConfig = CvConfig(),
    ids: Sequence[str] | None = None,
    train_mse: dict | None = None,
) -> dict[LayerId, RegressionModel]:
    """Fit one features -> ABM model per layer."""
    if abm.width != 1:
        raise DataError("ABM table must have a single column")
    ids = _reference_ids({**{l: t for l, t in features.items()}, "abm": abm}, ids)
    if len(ids) < cv.folds:
        raise DataError(f"stage 2 has {len(ids)} images, fewer than {cv.folds} folds")
    X = _aligned(features, ids, "features layer")
    y = abm.align(ids, what="ABM")
    layers = [l for l in LAYERS if l in features]
    jobs = {l: (lambda l=l: fit_ridge_cv(X[l], y, cv.lambda_grid, cv.folds, cv.seed, ids)) for l in layers}
    models = _run_jobs(jobs, cv.threads)
    if train_mse is not None:
        for l, m in models.items():
            train_mse[f"stage2/{l.name}"] = mse(m.predict(X[l]), y)
    return models


def train_two_stage(
    stage1_fmri: Mapping[RoiId, Table],
    stage1_features: Mapping[LayerId, Table],
    stage2_features: Mapping[LayerId, Table],
    stage2_abm: Table,
    cv: CvConfig = CvConfig(),
) -> TwoStageModel:
    train_mse: dict[str, float] = {}
    stage1 = train_stage1(stage1_fmri, stage1_features, cv, train_mse=train_mse)
    stage2 = train_stage2(stage2_features, stage2_abm, cv, train_mse=train_mse)
    metadata = {
        "n_stage1": len(_reference_ids(stage1_features, None)),
        "n_stage2": len(_reference_ids(stage2_features, None)),
        "lambda_grid": list(cv.lambda_grid),
        "folds": cv.folds,
        "cv_seed": cv.seed,
        "selected_lambda": {
            name: m.lam for name, m in TwoStageModel(stage1, stage2)._named_models()
        },
        "train_mse": train_mse,
    }
    return TwoStageModel(stage1, stage2, metadata)


# --------------------------------------------------------------------------
# prediction


def predict_abm_direct(features: FeatureVector, model: TwoStageModel) -> AbmRecord:
    m = model.stage2_model(features.layer)
    if features.values.size != m.n_inputs:
        raise DataError(f"{features.layer.name}: {features.values.size} features, model expects {m.n_inputs}")
    return AbmRecord(features.image_id, float(m.predict(features.values)[0]))


def predict_abm_indirect(fmri: FmriRecord, layer: LayerId, model: TwoStageModel) -> AbmRecord:
    s1 = model.stage1_model(fmri.roi, layer)
    s2 = model.stage2_model(layer)
    if fmri.voxels.size != s1.n_inputs:
        raise DataError(f"{fmri.roi.name}: {fmri.voxels.size} voxels, model expects {s1.n_inputs}")
    return AbmRecord(fmri.image_id, float(s2.predict(s1.predict(fmri.voxels))[0]))


def direct_grid(features: Mapping[LayerId, Table], model: TwoStageModel, ids: Sequence[str] | None = None) -> Table:
    """Images x layers matrix of ABM predicted from true features."""
    layers = model.layers
    missing = [l.name for l in layers if l not in features]
    if missing:
        raise DataError(f"no features for layer(s) {missing}")
    ids = _reference_ids({l: features[l] for l in layers}, ids)
    cols = [model.stage2_model(l).predict(features[l].align(ids, f"features layer {l.name}"))[:, 0] for l in layers]
    return Table(ids, np.column_stack(cols))


def indirect_grid(fmri: Table, roi: RoiId, model: TwoStageModel, ids: Sequence[str] | None = None) -> Table:
    """Images x layers matrix of ABM predicted from one ROI's voxels."""
    ids = tuple(sorted(ids if ids is not None else fmri.ids))
    X = fmri.align(ids, f"fMRI ROI {roi.name}")
    cols = []
    for l in model.layers:
        s1 = model.stage1_model(roi, l)
        if X.shape[1] != s1.n_inputs:
            raise DataError(f"{roi.name}: {X.shape[1]} voxels, model expects {s1.n_inputs}")
        cols.append(model.stage2_model(l).predict(s1.predict(X))[:, 0])
    return Table(ids, np.column_stack(cols))


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvaluationReport:
    layer_mse: dict[tuple[RoiId, LayerId], float]
    roi_mse: dict[RoiId, float]
    direct: Table
    indirect: dict[RoiId, Table]
    layers: list[LayerId]
    n_images: int

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer_means(self) -> dict[LayerId, float]:
        """Average directly-predicted ABM per layer."""
        means = self.direct.values.mean(axis=0)
        return {l: float(m) for l, m in zip(self.layers, means)}

    def rows(self) -> list[tuple]:
        """``(roi, layer, mse)`` rows; layer ``ALL`` holds the per-ROI mean."""
        out = []
        for roi in self.roi_mse:
            for l in self.layers:
                out.append((roi.name, l.name, self.layer_mse[(roi, l)]))
            out.append((roi.name, "ALL", self.roi_mse[roi]))
        return out


def evaluate_rois(
    fmri: Mapping[RoiId, Table],
    features: Mapping[LayerId, Table],
    model: TwoStageModel,
    rois: Iterable[RoiId] | None = None,
) -> EvaluationReport:
    """MSE between direct and indirect ABM per (ROI, layer) over the test images."""
    rois = list(rois) if rois is not None else model.rois
    missing = [r.name for r in rois if r not in fmri]
    if missing:
        raise DataError(f"incomplete test coverage: no fMRI for ROI(s) {missing}")
    ids = _reference_ids({**{("f", l): features[l] for l in model.layers if l in features}, **{r: fmri[r] for r in rois}}, None)
    direct = direct_grid(features, model, ids)
    layer_mse, roi_mse, indirect = {}, {}, {}
    for roi in rois:
        grid = indirect_grid(fmri[roi], roi, model, ids)
        indirect[roi] = grid
        per_layer = [mse(direct.values[:, j], grid.values[:, j]) for j in range(len(model.layers))]
        for l, v in zip(model.layers, per_layer):
            layer_mse[(roi, l)] = v
        roi_mse[roi] = float(np.mean(per_layer))
    return EvaluationReport(layer_mse, roi_mse, direct, indirect, model.layers, len(ids))


@dataclass(frozen=True)
class CategoryRow:
    abm_animal: float
    abm_object: float
    difference: float


@dataclass
class CategoryComparison:
    rows: dict[LayerId, CategoryRow]

    def records(self) -> list[tuple]:
        return [(l.name, r.abm_animal, r.abm_object, r.difference) for l, r in self.rows.items()]


def _group_mean(group, layer: LayerId) -> np.ndarray:
    data = group[layer]
    if isinstance(data, Table):
        if len(data) == 0:
            raise DataError(f"empty category at layer {layer.name}")
        return data.values.mean(axis=0)
    return average_features(list(data)).values


def compare_categories(animal: Mapping, obj: Mapping, model: TwoStageModel) -> CategoryComparison:
    """Stage-2 ABM of each category's average features, per layer.

    Each group maps a layer to a :class:`Table` of per-image features or to a
    list of :class:`FeatureVector`.
    """
    rows = {}
    for layer in model.layers:
        if layer not in animal or layer not in obj:
            raise DataError(f"category features missing for layer {layer.name}")
        m = model.stage2_model(layer)
        a = float(m.predict(_group_mean(animal, layer))[0])
        o = float(m.predict(_group_mean(obj, layer))[0])
        rows[layer] = CategoryRow(a, o, a - o)
    return CategoryComparison(rows)
