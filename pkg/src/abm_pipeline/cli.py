"""Command-line front end.

    abm-pipeline gen-synth --out DATA
    abm-pipeline train --manifest DATA/manifest.json --out MODEL
    abm-pipeline evaluate --manifest DATA/manifest.json --model MODEL --out RESULTS
    abm-pipeline compare-categories --manifest DATA/manifest.json --model MODEL --out RESULTS
    abm-pipeline extract --images IMAGES.csv --weight-seed 0 --layers conv1,fc6 --out FEATURES
    abm-pipeline simulate-rsvp --p2 0.5 --p8 0.9 --trials 100000

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical failure.
Seeds default to ``$ABM_PIPELINE_SEED`` (or 0).
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cnn import NetworkWeights, forward_features
from .core import LAYERS, DataError, ImageTensor, LayerId, Manifest, RoiId, Table, read_table, write_records_csv, write_table
from .pipeline import (
    CvConfig,
    TwoStageModel,
    compare_categories,
    evaluate_rois,
    single_threaded,
    train_two_stage,
)
from .regress import DEFAULT_LAMBDA_GRID, SingularSystemError
from .synth import DESK_FEATURE_LENGTH, DEFAULT_VOXELS, ObserverParams, SynthConfig, gen_synthetic_dataset, simulate_rsvp

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    """Resolved settings of one invocation, echoed as ``run_config.json``."""

    command: str
    options: dict = field(default_factory=dict)

    def write(self, directory: Path) -> None:
        doc = {"command": self.command, "options": self.options}
        (directory / "run_config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _env_seed() -> int:
    raw = os.environ.get("ABM_PIPELINE_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"ABM_PIPELINE_SEED must be an integer, got {raw!r}") from None


def _flag_names(kind, text: str) -> list:
    """Parse a comma-separated list of layer or ROI names given on the command line."""
    try:
        return [kind.parse(t) for t in text.split(",") if t.strip()]
    except DataError as exc:
        raise UsageError(str(exc)) from None


def _layers(text: str | None) -> list[LayerId]:
    return _flag_names(LayerId, text) if text else list(LAYERS)


def _rois(text: str | None) -> list[RoiId] | None:
    return _flag_names(RoiId, text) if text else None


def _floats(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise UsageError(f"invalid number list {text!r}") from None
    if not values or any(not v >= 0 for v in values):
        raise UsageError("lambda grid must be a non-empty list of non-negative numbers")
    return values


def _cv(args) -> CvConfig:
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    threads = 1 if args.deterministic else args.threads
    return CvConfig(_floats(args.lambdas), args.folds, args.cv_seed, threads)


def _mode(args):
    return single_threaded() if getattr(args, "deterministic", False) else contextlib.nullcontext()


def _options(args, skip=("func", "out")) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# --------------------------------------------------------------------------
# commands


def cmd_gen_synth(args) -> int:
    if args.alexnet_lengths:
        lengths = {l: l.feature_length for l in LAYERS}
    else:
        if args.feature_length < 1:
            raise UsageError("--feature-length must be positive")
        lengths = {l: args.feature_length for l in LAYERS}
    voxels = dict(DEFAULT_VOXELS)
    if args.voxels:
        for item in args.voxels.split(","):
            name, _, count = item.partition("=")
            if not count.strip().isdigit():
                raise UsageError(f"--voxels expects ROI=COUNT pairs, got {item!r}")
            (roi,) = _flag_names(RoiId, name)
            if not roi.is_atomic:
                raise UsageError(f"voxel counts are set per atomic ROI, not {roi.name}")
            voxels[roi] = int(count)
    try:
        config = SynthConfig(
            voxels=voxels,
            feature_lengths=lengths,
            n_stage1=args.n_stage1,
            n_stage2=args.n_stage2,
            n_test=args.n_test,
            fmri_noise_sigma=args.fmri_noise,
            abm_noise_sigma=args.abm_noise,
            abm_source_layer=LayerId.parse(args.source_layer),
            category_shift=args.category_shift,
            category_size=args.category_size,
            latent_dim=args.latent_dim,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    with _mode(args):
        dataset = gen_synthetic_dataset(config)
    manifest = dataset.write(out)
    RunConfig("gen-synth", _options(args)).write(out)
    print(manifest)
    return EXIT_OK


def _load_images(path: Path, size: int) -> list[ImageTensor]:
    table = read_table(path)
    return [ImageTensor.from_flat(table.values[i], size, size, image_id) for i, image_id in enumerate(table.ids)]


def cmd_extract(args) -> int:
    if (args.weights is None) == (args.weight_seed is None):
        raise UsageError("give exactly one of --weights or --weight-seed")
    if (args.images is None) == (args.manifest is None):
        raise UsageError("give exactly one of --images or --manifest")
    layers = _layers(args.layers)
    with _mode(args):
        weights = (
            NetworkWeights.load(args.weights) if args.weights else NetworkWeights.initialize(args.weight_seed)
        )
        size = weights.architecture.input_size
        if args.images:
            sources = {None: Path(args.images)}
        else:
            manifest = Manifest.load(args.manifest)
            if not manifest.images:
                raise DataError(f"{args.manifest}: manifest lists no image files")
            sources = {split: manifest.path(rel) for split, rel in manifest.images.items()}
        results = {}
        for split, path in sources.items():
            images = _load_images(path, size)
            if not images:
                raise DataError(f"{path}: no images")
            feats = [forward_features(img, weights, layers) for img in images]
            ids = [img.image_id for img in images]
            results[split] = {l: Table(ids, np.vstack([f[l].values for f in feats])) for l in layers}
    out = Path(args.out)
    for split, tables in results.items():
        target = out if split is None else out / split
        target.mkdir(parents=True, exist_ok=True)
        for layer, table in tables.items():
            write_table(target / f"{layer.name}.csv", table)
    RunConfig("extract", _options(args)).write(out)
    return EXIT_OK


def cmd_train(args) -> int:
    cv = _cv(args)
    layers = _layers(args.layers)
    rois = _rois(args.rois)
    manifest = Manifest.load(args.manifest)
    s1_ids = manifest.splits.get("stage1-train")
    s2_ids = manifest.splits.get("stage2-train")
    fmri = manifest.load_fmri("stage1-train", rois)
    f1 = manifest.load_features("stage1-train", layers)
    f2 = manifest.load_features("stage2-train", layers)
    abm = manifest.load_abm("stage2-train")
    if s1_ids is not None:
        fmri = {r: t.subset(s1_ids) for r, t in fmri.items()}
        f1 = {l: t.subset(s1_ids) for l, t in f1.items()}
    if s2_ids is not None:
        f2 = {l: t.subset(s2_ids) for l, t in f2.items()}
        abm = abm.subset(s2_ids)
    with _mode(args):
        model = train_two_stage(fmri, f1, f2, abm, cv)
    out = Path(args.out)
    model.save(out)
    RunConfig("train", _options(args)).write(out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    rois = _rois(args.rois)
    manifest = Manifest.load(args.manifest)
    model = TwoStageModel.load(args.model)
    rois = rois or model.rois
    fmri = manifest.load_fmri("test", rois)
    features = manifest.load_features("test", model.layers)
    ids = manifest.splits.get("test")
    if ids is not None:
        fmri = {r: t.subset(ids) for r, t in fmri.items()}
        features = {l: t.subset(ids) for l, t in features.items()}
    with _mode(args):
        report = evaluate_rois(fmri, features, model, rois)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    columns = [l.name for l in report.layers]
    write_records_csv(out / "mse_by_roi.csv", ["roi", "layer", "mse"], report.rows())
    write_table(out / "abm_direct.csv", report.direct, columns)
    for roi, grid in report.indirect.items():
        write_table(out / f"abm_indirect_{roi.name}.csv", grid, columns)
    write_records_csv(out / "abm_layer_means.csv", ["layer", "abm_mean"], report.layer_means().items())
    RunConfig("evaluate", _options(args)).write(out)
    return EXIT_OK


def cmd_compare_categories(args) -> int:
    manifest = Manifest.load(args.manifest)
    model = TwoStageModel.load(args.model)
    animal = manifest.load_category_features(args.group_a, model.layers)
    obj = manifest.load_category_features(args.group_b, model.layers)
    with _mode(args):
        comparison = compare_categories(animal, obj, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(
        out / "abm_by_category.csv", ["layer", "abm_animal", "abm_object", "difference"], comparison.records()
    )
    RunConfig("compare-categories", _options(args)).write(out)
    return EXIT_OK


def cmd_simulate_rsvp(args) -> int:
    try:
        params = ObserverParams(args.p2, args.p8, args.trials, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = simulate_rsvp(params)
    header = ["p_lag2", "p_lag8", "trials_per_lag", "seed", "correct_lag2", "correct_lag8", "empirical_abm"]
    row = [params.p_correct_lag2, params.p_correct_lag8, result.trials_per_lag, params.seed,
           result.correct_lag2, result.correct_lag8, result.empirical_abm]
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_records_csv(out, header, [row])
    else:
        print(",".join(header))
        print(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_cv_flags(p):
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--lambdas", default=",".join(repr(v) for v in DEFAULT_LAMBDA_GRID),
                   help="comma-separated ridge penalties searched by cross-validation")
    p.add_argument("--cv-seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--layers", default=None, help="comma-separated layers (default: all seven)")
    p.add_argument("--rois", default=None, help="comma-separated ROIs (default: all ten)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="abm-pipeline", description="Two-stage attentional-blink magnitude pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        p.add_argument("--deterministic", action="store_true", help="single-threaded, bitwise reproducible")
        return p

    p = add("gen-synth", cmd_gen_synth, "generate a synthetic dataset with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-stage1", type=int, default=1200)
    p.add_argument("--n-stage2", type=int, default=41)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--fmri-noise", type=float, default=0.3)
    p.add_argument("--abm-noise", type=float, default=0.1)
    p.add_argument("--source-layer", default="Conv3")
    p.add_argument("--category-shift", type=float, default=0.0)
    p.add_argument("--category-size", type=int, default=12)
    p.add_argument("--latent-dim", type=int, default=8)
    p.add_argument("--feature-length", type=int, default=DESK_FEATURE_LENGTH)
    p.add_argument("--alexnet-lengths", action="store_true", help="use the full AlexNet feature lengths")
    p.add_argument("--voxels", default=None, help="e.g. V1=100,LOC=150")

    p = add("extract", cmd_extract, "extract AlexNet layer features from image CSVs")
    p.add_argument("--images", default=None, help="matrix CSV, one flattened 3xHxW image per row")
    p.add_argument("--manifest", default=None, help="manifest whose 'images' section lists image CSVs")
    p.add_argument("--weights", default=None, help="weight directory (weights.json + CSVs)")
    p.add_argument("--weight-seed", type=int, default=None)
    p.add_argument("--layers", default=None)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "fit stage-1 and stage-2 regressions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_cv_flags(p)

    p = add("evaluate", cmd_evaluate, "direct vs indirect ABM and per-ROI MSE on the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rois", default=None)

    p = add("compare-categories", cmd_compare_categories, "per-layer ABM of category-average features")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--group-a", default="animal")
    p.add_argument("--group-b", default="object")

    p = add("simulate-rsvp", cmd_simulate_rsvp, "simulate lag-2/lag-8 RSVP trials")
    p.add_argument("--p2", type=float, required=True)
    p.add_argument("--p8", type=float, required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        env_seed = _env_seed()
        for name in ("seed", "cv_seed"):
            if hasattr(args, name) and getattr(args, name) is None:
                setattr(args, name, env_seed)
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"abm-pipeline: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SingularSystemError as exc:
        print(f"abm-pipeline: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"abm-pipeline: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
