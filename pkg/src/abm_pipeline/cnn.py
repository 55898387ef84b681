"""Plain-numpy AlexNet forward pass producing per-layer feature vectors.

Geometry (3x227x227 input)::

    conv1 11x11/4        -> 96x55x55   -> pool 3/2 -> 96x27x27
    conv2  5x5/1 pad 2   -> 256x27x27  -> pool 3/2 -> 256x13x13
    conv3  3x3/1 pad 1   -> 384x13x13
    conv4  3x3/1 pad 1   -> 384x13x13
    conv5  3x3/1 pad 1   -> 256x13x13  -> pool 3/2 -> 256x6x6
    fc6   9216 -> 4096
    fc7   4096 -> 4096

Layer features are the post-ReLU activations, taken before pooling.
No local response normalisation, no dropout, no grouped convolutions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import DataError, FeatureVector, ImageTensor, LayerId, read_matrix_csv, write_matrix_csv

CONV_LAYERS = (LayerId.Conv1, LayerId.Conv2, LayerId.Conv3, LayerId.Conv4, LayerId.Conv5)
FC_LAYERS = (LayerId.Fc6, LayerId.Fc7)


@dataclass(frozen=True)
class ConvLayerSpec:
    out_channels: int
    kernel_size: int
    stride: int = 1
    padding: int = 0
    pool: tuple[int, int] | None = None  # (window, stride), applied after the ReLU

    def __post_init__(self):
        if min(self.out_channels, self.kernel_size, self.stride) < 1 or self.padding < 0:
            raise ValueError(f"invalid convolution spec {self}")

    def output_size(self, size: int) -> int:
        out = (size + 2 * self.padding - self.kernel_size) // self.stride + 1
        if out < 1:
            raise DataError(f"kernel {self.kernel_size} does not fit input of size {size}")
        return out


@dataclass(frozen=True)
class Architecture:
    input_size: int
    in_channels: int
    convs: tuple[ConvLayerSpec, ...]
    fc_units: tuple[int, int]

    def __post_init__(self):
        if len(self.convs) != len(CONV_LAYERS) or len(self.fc_units) != len(FC_LAYERS):
            raise ValueError("architecture must have 5 convolution and 2 fully connected layers")

    def layer_shapes(self) -> dict[LayerId, tuple[int, ...]]:
        shapes = {}
        size = self.input_size
        for layer, spec in zip(CONV_LAYERS, self.convs):
            size = spec.output_size(size)
            shapes[layer] = (spec.out_channels, size, size)
            if spec.pool is not None:
                size = pool_output_size(size, *spec.pool)
        for layer, units in zip(FC_LAYERS, self.fc_units):
            shapes[layer] = (units,)
        return shapes

    def flat_conv_output(self) -> int:
        """Length of the flattened input of fc6."""
        size = self.input_size
        for spec in self.convs:
            size = spec.output_size(size)
            if spec.pool is not None:
                size = pool_output_size(size, *spec.pool)
        return self.convs[-1].out_channels * size * size

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        channels = self.in_channels
        for layer, spec in zip(CONV_LAYERS, self.convs):
            key = layer.name.lower()
            shapes[f"{key}.weight"] = (spec.out_channels, channels, spec.kernel_size, spec.kernel_size)
            shapes[f"{key}.bias"] = (spec.out_channels,)
            channels = spec.out_channels
        fan_in = self.flat_conv_output()
        for layer, units in zip(FC_LAYERS, self.fc_units):
            key = layer.name.lower()
            shapes[f"{key}.weight"] = (units, fan_in)
            shapes[f"{key}.bias"] = (units,)
            fan_in = units
        return shapes

    def to_json(self) -> dict:
        return {
            "input_size": self.input_size,
            "in_channels": self.in_channels,
            "convs": [
                {
                    "out_channels": c.out_channels,
                    "kernel_size": c.kernel_size,
                    "stride": c.stride,
                    "padding": c.padding,
                    "pool": list(c.pool) if c.pool else None,
                }
                for c in self.convs
            ],
            "fc_units": list(self.fc_units),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Architecture":
        convs = tuple(
            ConvLayerSpec(
                c["out_channels"], c["kernel_size"], c["stride"], c["padding"],
                tuple(c["pool"]) if c.get("pool") else None,
            )
            for c in doc["convs"]
        )
        return cls(doc["input_size"], doc["in_channels"], convs, tuple(doc["fc_units"]))


ALEXNET = Architecture(
    input_size=227,
    in_channels=3,
    convs=(
        ConvLayerSpec(96, 11, stride=4, padding=0, pool=(3, 2)),
        ConvLayerSpec(256, 5, stride=1, padding=2, pool=(3, 2)),
        ConvLayerSpec(384, 3, stride=1, padding=1),
        ConvLayerSpec(384, 3, stride=1, padding=1),
        ConvLayerSpec(256, 3, stride=1, padding=1, pool=(3, 2)),
    ),
    fc_units=(4096, 4096),
)


def pool_output_size(size: int, window: int, stride: int) -> int:
    if window > size:
        raise DataError(f"pooling window {window} larger than input {size}")
    return (size - window) // stride + 1


# --------------------------------------------------------------------------
# primitives


def conv2d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation of a CxHxW input with KxCxkxk kernels."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 3 or weights.ndim != 4 or weights.shape[1] != x.shape[0]:
        raise DataError(f"conv2d: input {x.shape} incompatible with weights {weights.shape}")
    if weights.shape[2] != weights.shape[3]:
        raise DataError("conv2d: kernels must be square")
    if bias.shape != (weights.shape[0],):
        raise DataError(f"conv2d: bias shape {bias.shape}, expected ({weights.shape[0]},)")
    if not np.all(np.isfinite(x)):
        raise DataError("conv2d: non-finite input")
    if stride < 1 or padding < 0:
        raise DataError("conv2d: stride must be >= 1 and padding >= 0")
    k = weights.shape[2]
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    if k > x.shape[1] or k > x.shape[2]:
        raise DataError(f"conv2d: kernel {k} larger than padded input {x.shape[1:]}")
    windows = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    # windows: C x H' x W' x k x k
    out = np.tensordot(weights, windows, axes=([1, 2, 3], [0, 3, 4]))
    return out + bias[:, None, None]


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def maxpool(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DataError(f"maxpool expects CxHxW input, got {x.shape}")
    if window > x.shape[1] or window > x.shape[2]:
        raise DataError(f"pooling window {window} larger than input {x.shape[1:]}")
    return sliding_window_view(x, (window, window), axis=(1, 2))[:, ::stride, ::stride].max(axis=(-2, -1))


def fc_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weights.ndim != 2 or weights.shape[1] != x.size or bias.shape != (weights.shape[0],):
        raise DataError(f"fc_forward: input {x.size}, weights {weights.shape}, bias {bias.shape}")
    return weights @ x + bias


# --------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class NetworkWeights:
    arrays: dict[str, np.ndarray]
    architecture: Architecture = ALEXNET
    provenance: str = ""
    seed: int | None = None

    def __post_init__(self):
        expected = self.architecture.param_shapes()
        object.__setattr__(self, "arrays", dict(self.arrays))
        if set(self.arrays) != set(expected):
            raise DataError(f"weights must contain exactly {sorted(expected)}")
        for name, shape in expected.items():
            arr = np.asarray(self.arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise DataError(f"{name}: shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name}: non-finite values")
            arr.setflags(write=False)
            self.arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    @classmethod
    def initialize(cls, seed: int, architecture: Architecture = ALEXNET) -> "NetworkWeights":
        """Scaled-uniform init: U(-s, s) with s = sqrt(2 / fan_in); zero biases."""
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, shape in architecture.param_shapes().items():
            if name.endswith(".bias"):
                arrays[name] = np.zeros(shape)
            else:
                scale = math.sqrt(2.0 / math.prod(shape[1:]))
                arrays[name] = rng.uniform(-scale, scale, size=shape)
        return cls(arrays, architecture, provenance=f"seed:{seed}", seed=seed)

    def save(self, directory) -> Path:
        """One CSV per array (reshaped to rows x rest) plus ``weights.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = {}
        for name, arr in self.arrays.items():
            fname = name.replace(".", "_") + ".csv"
            flat = arr.reshape(arr.shape[0], -1)
            write_matrix_csv(directory / fname, [f"r{i}" for i in range(flat.shape[0])], flat)
            entries[name] = {"file": fname, "shape": list(arr.shape)}
        doc = {
            "architecture": self.architecture.to_json(),
            "arrays": entries,
            "seed": self.seed,
            "provenance": self.provenance,
        }
        path = directory / "weights.json"
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, directory) -> "NetworkWeights":
        directory = Path(directory)
        meta = directory / "weights.json"
        if not meta.is_file():
            raise DataError(f"{directory}: missing weights.json")
        doc = json.loads(meta.read_text(encoding="utf-8"))
        arch = Architecture.from_json(doc["architecture"])
        arrays = {}
        for name, entry in doc["arrays"].items():
            _, flat = read_matrix_csv(directory / entry["file"])
            shape = tuple(entry["shape"])
            if flat.size != math.prod(shape):
                raise DataError(f"{name}: {flat.size} values for shape {shape}")
            arrays[name] = flat.reshape(shape)
        return cls(arrays, arch, provenance=str(directory), seed=doc.get("seed"))


# --------------------------------------------------------------------------
# feature extraction


def forward_features(
    image: ImageTensor, weights: NetworkWeights, layers: Iterable[LayerId] | None = None
) -> dict[LayerId, FeatureVector]:
    """Run the network once, collecting features for every requested layer."""
    arch = weights.architecture
    wanted = set(layers) if layers is not None else set(LayerId)
    size = arch.input_size
    if image.shape != (arch.in_channels, size, size):
        raise DataError(
            f"image {image.image_id!r} has shape {image.shape}, expected {(arch.in_channels, size, size)}"
        )
    order = list(LayerId)
    deepest = max(order.index(l) for l in wanted)
    out: dict[LayerId, FeatureVector] = {}
    x = image.values
    for layer, spec in zip(CONV_LAYERS, arch.convs):
        if order.index(layer) > deepest:
            return out
        key = layer.name.lower()
        x = relu(conv2d(x, weights[f"{key}.weight"], weights[f"{key}.bias"], spec.stride, spec.padding))
        if layer in wanted:
            out[layer] = FeatureVector(layer, image.image_id, x.ravel())
        if spec.pool is not None:
            x = maxpool(x, *spec.pool)
    x = x.ravel()
    for layer in FC_LAYERS:
        if order.index(layer) > deepest:
            return out
        key = layer.name.lower()
        x = relu(fc_forward(x, weights[f"{key}.weight"], weights[f"{key}.bias"]))
        if layer in wanted:
            out[layer] = FeatureVector(layer, image.image_id, x)
    return out


def extract_features(image: ImageTensor, weights: NetworkWeights, layer: LayerId) -> FeatureVector:
    return forward_features(image, weights, [layer])[layer]


def average_features(features: Sequence[FeatureVector], label: str = "mean") -> FeatureVector:
    if not features:
        raise DataError("cannot average an empty list of feature vectors")
    layer = features[0].layer
    if any(f.layer != layer for f in features):
        raise DataError("cannot average features from different layers")
    length = features[0].values.size
    if any(f.values.size != length for f in features):
        raise DataError("cannot average feature vectors of different lengths")
    return FeatureVector(layer, label, np.mean([f.values for f in features], axis=0))
