"""Identifiers, record types and the CSV/JSON file formats shared by every stage.

The matrix CSV format is the only exchange format between stages::

    id,c0,c1,...
    img0001,0.25,1.5,...

Rows are matched across files by ``id``, never by position.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data (bad file, id mismatch, bad shape)."""


class LayerId(enum.Enum):
    """AlexNet layers used as feature sources; the output layer fc8 is excluded."""

    Conv1 = "conv1"
    Conv2 = "conv2"
    Conv3 = "conv3"
    Conv4 = "conv4"
    Conv5 = "conv5"
    Fc6 = "fc6"
    Fc7 = "fc7"

    @property
    def shape(self) -> tuple[int, ...]:
        return _LAYER_SHAPES[self]

    @property
    def feature_length(self) -> int:
        return math.prod(_LAYER_SHAPES[self])

    @classmethod
    def parse(cls, name: str) -> "LayerId":
        for member in cls:
            if member.name.lower() == name.strip().lower():
                return member
        raise DataError(f"unknown layer {name!r}; expected one of {[m.name for m in cls]}")


_LAYER_SHAPES = {
    LayerId.Conv1: (96, 55, 55),
    LayerId.Conv2: (256, 27, 27),
    LayerId.Conv3: (384, 13, 13),
    LayerId.Conv4: (384, 13, 13),
    LayerId.Conv5: (256, 13, 13),
    LayerId.Fc6: (4096,),
    LayerId.Fc7: (4096,),
}


class RoiId(enum.Enum):
    """Visual regions of interest. Composite regions concatenate their parts."""

    V1 = ("V1",)
    V2 = ("V2",)
    V3 = ("V3",)
    V4 = ("V4",)
    LOC = ("LOC",)
    FFA = ("FFA",)
    PPA = ("PPA",)
    LVC = ("V1", "V2", "V3")
    HVC = ("LOC", "FFA", "PPA")
    VC = ("V1", "V2", "V3", "V4", "LOC", "FFA", "PPA")

    @property
    def composition(self) -> tuple["RoiId", ...]:
        return tuple(RoiId[name] for name in self.value)

    @property
    def is_atomic(self) -> bool:
        return len(self.value) == 1

    @classmethod
    def atomic(cls) -> tuple["RoiId", ...]:
        return tuple(r for r in cls if r.is_atomic)

    @classmethod
    def composite(cls) -> tuple["RoiId", ...]:
        return tuple(r for r in cls if not r.is_atomic)

    @classmethod
    def parse(cls, name: str) -> "RoiId":
        for member in cls:
            if member.name.lower() == name.strip().lower():
                return member
        raise DataError(f"unknown ROI {name!r}; expected one of {[m.name for m in cls]}")


LAYERS: tuple[LayerId, ...] = tuple(LayerId)
ROIS: tuple[RoiId, ...] = tuple(RoiId)


def _finite_array(values, what: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True)
class ImageTensor:
    """A 3-channel image, channel-major, values in [0, 1]."""

    values: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        arr = _finite_array(self.values, "image")
        if arr.ndim != 3 or arr.shape[0] != 3 or min(arr.shape) < 1:
            raise DataError(f"image must have shape 3xHxW, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("image values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @classmethod
    def from_flat(cls, flat: np.ndarray, height: int, width: int, image_id: str = "") -> "ImageTensor":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != 3 * height * width:
            raise DataError(f"image {image_id!r}: {flat.size} values cannot form 3x{height}x{width}")
        return cls(flat.reshape(3, height, width), image_id)


@dataclass(frozen=True)
class FeatureVector:
    layer: LayerId
    image_id: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _finite_array(self.values, f"features of {self.image_id!r}").ravel())


@dataclass(frozen=True)
class FmriRecord:
    roi: RoiId
    image_id: str
    voxels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "voxels", _finite_array(self.voxels, f"fMRI of {self.image_id!r}").ravel())


@dataclass(frozen=True)
class AbmRecord:
    image_id: str
    abm: float


@dataclass(frozen=True)
class Table:
    """Rows of a matrix keyed by image id."""

    ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[0] != len(ids):
            raise DataError(f"{len(ids)} ids for a matrix of shape {values.shape}")
        if len(set(ids)) != len(ids):
            raise DataError("duplicate ids in table")
        values.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def row(self, image_id: str) -> np.ndarray:
        return self.values[self._index()[image_id]]

    def _index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.ids)}

    def align(self, ids: Sequence[str], what: str = "table") -> np.ndarray:
        """Rows for ``ids`` in the given order; raises naming the first missing id."""
        index = self._index()
        missing = [i for i in ids if i not in index]
        if missing:
            raise DataError(f"{what}: image id {missing[0]!r} not found ({len(missing)} missing)")
        return self.values[[index[i] for i in ids]]

    def subset(self, ids: Sequence[str]) -> "Table":
        return Table(tuple(ids), self.align(ids))

    def sorted(self) -> "Table":
        return self.subset(sorted(self.ids))


# --------------------------------------------------------------------------
# matrix CSV


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        if not header or header[0] != "id":
            raise DataError(f"{path}: first header column must be 'id'")
        width = len(header) - 1
        ids: list[str] = []
        seen: dict[str, int] = {}
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width + 1:
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {width + 1}")
            rid = row[0]
            if rid in seen:
                raise DataError(f"{path}: row {lineno} repeats id {rid!r} (first at row {seen[rid]})")
            seen[rid] = lineno
            values = []
            for col, cell in enumerate(row[1:], start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {col} ({header[col]}): non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(
                        f"{path}: row {lineno}, column {col} ({header[col]}): non-finite value {cell!r}"
                    )
                values.append(v)
            ids.append(rid)
            rows.append(values)
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    return ids, matrix


def write_matrix_csv(path, row_ids: Sequence[str], matrix, columns: Sequence[str] | None = None) -> None:
    """Write ``matrix`` with shortest round-trip float literals (``repr``)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.ndim != 2 or matrix.shape[0] != len(row_ids):
        raise DataError(f"{len(row_ids)} row ids for a matrix of shape {matrix.shape}")
    if columns is None:
        columns = [f"c{j}" for j in range(matrix.shape[1])]
    elif len(columns) != matrix.shape[1]:
        raise DataError("column names do not match matrix width")
    lines = [",".join(["id", *columns])]
    for rid, row in zip(row_ids, matrix.tolist()):
        lines.append(",".join([str(rid), *map(repr, row)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_table(path) -> Table:
    ids, matrix = read_matrix_csv(path)
    return Table(tuple(ids), matrix)


def write_table(path, table: Table, columns: Sequence[str] | None = None) -> None:
    write_matrix_csv(path, table.ids, table.values, columns)


def write_records_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Plain CSV with named columns; floats are written with ``repr``."""

    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        if isinstance(v, enum.Enum):
            return v.name
        return str(v)

    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_records_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# dataset manifest

SPLITS = ("stage1-train", "stage2-train", "test")


@dataclass
class Manifest:
    """Paths (relative to ``root``) of every file in a dataset.

    ``features[split][layer]``, ``fmri[split][roi]`` and ``abm[split]`` name
    matrix CSV files; ``splits`` and ``categories`` list image ids.
    ``category_features[group][layer]`` optionally overrides the test
    features used for the category comparison.
    """

    root: Path
    features: dict[str, dict[LayerId, str]] = field(default_factory=dict)
    fmri: dict[str, dict[RoiId, str]] = field(default_factory=dict)
    abm: dict[str, str] = field(default_factory=dict)
    splits: dict[str, list[str]] = field(default_factory=dict)
    categories: dict[str, list[str]] = field(default_factory=dict)
    category_features: dict[str, dict[LayerId, str]] = field(default_factory=dict)
    images: dict[str, str] = field(default_factory=dict)
    image_shape: tuple[int, int, int] | None = None
    ground_truth: str | None = None
    extra: dict = field(default_factory=dict)

    def path(self, rel: str) -> Path:
        return self.root / rel

    def to_json(self) -> dict:
        doc = {
            "format": "abm-pipeline-manifest/1",
            "features": {s: {l.name: p for l, p in m.items()} for s, m in self.features.items()},
            "fmri": {s: {r.name: p for r, p in m.items()} for s, m in self.fmri.items()},
            "abm": dict(self.abm),
            "splits": {s: list(v) for s, v in self.splits.items()},
            "categories": {s: list(v) for s, v in self.categories.items()},
        }
        if self.category_features:
            doc["category_features"] = {
                g: {l.name: p for l, p in m.items()} for g, m in self.category_features.items()
            }
        if self.images:
            doc["images"] = dict(self.images)
            doc["image_shape"] = list(self.image_shape) if self.image_shape else None
        if self.ground_truth:
            doc["ground_truth"] = self.ground_truth
        if self.extra:
            doc["extra"] = self.extra
        return doc

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"{path}: manifest not found")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from None
        try:
            shape = doc.get("image_shape")
            return cls(
                root=path.parent,
                features={
                    s: {LayerId.parse(l): p for l, p in m.items()} for s, m in doc.get("features", {}).items()
                },
                fmri={s: {RoiId.parse(r): p for r, p in m.items()} for s, m in doc.get("fmri", {}).items()},
                abm=dict(doc.get("abm", {})),
                splits={s: list(v) for s, v in doc.get("splits", {}).items()},
                categories={s: list(v) for s, v in doc.get("categories", {}).items()},
                category_features={
                    g: {LayerId.parse(l): p for l, p in m.items()}
                    for g, m in doc.get("category_features", {}).items()
                },
                images=dict(doc.get("images", {})),
                image_shape=tuple(shape) if shape else None,
                ground_truth=doc.get("ground_truth"),
                extra=doc.get("extra", {}),
            )
        except (AttributeError, TypeError) as exc:
            raise DataError(f"{path}: malformed manifest ({exc})") from None

    def load_features(self, split: str, layers: Iterable[LayerId] | None = None) -> dict[LayerId, Table]:
        files = self._section(self.features, split, "features")
        layers = list(layers) if layers is not None else list(files)
        missing = [l.name for l in layers if l not in files]
        if missing:
            raise DataError(f"manifest has no {split} features for layer(s) {missing}")
        return {l: read_table(self.path(files[l])) for l in layers}

    def load_fmri(self, split: str, rois: Iterable[RoiId] | None = None) -> dict[RoiId, Table]:
        files = self._section(self.fmri, split, "fmri")
        rois = list(rois) if rois is not None else list(files)
        missing = [r.name for r in rois if r not in files]
        if missing:
            raise DataError(f"manifest has no {split} fMRI for ROI(s) {missing}")
        return {r: read_table(self.path(files[r])) for r in rois}

    def load_abm(self, split: str) -> Table:
        if split not in self.abm:
            raise DataError(f"manifest has no ABM file for split {split!r}")
        table = read_table(self.path(self.abm[split]))
        if table.width != 1:
            raise DataError(f"ABM file for {split!r} must have exactly one value column")
        return table

    def load_category_features(self, group: str, layers: Iterable[LayerId] | None = None) -> dict[LayerId, Table]:
        if group not in self.categories:
            raise DataError(f"manifest has no category {group!r}")
        ids = self.categories[group]
        if not ids:
            raise DataError(f"category {group!r} is empty")
        if group in self.category_features:
            files = self.category_features[group]
            layers = list(layers) if layers is not None else list(files)
            tables = {l: read_table(self.path(files[l])) for l in layers}
        else:
            tables = self.load_features("test", layers)
        return {l: t.subset(ids) for l, t in tables.items()}

    @staticmethod
    def _section(section: Mapping, split: str, what: str):
        if split not in section:
            raise DataError(f"manifest has no {what} for split {split!r}")
        return section[split]

