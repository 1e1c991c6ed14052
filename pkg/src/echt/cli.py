"""Command-line entry points for the full pipeline.

Commands: synth, train, detect, eval, experiment, inspect-model. Every
knob can also come from a flat key=value config file (--config); flags
override the file, the file overrides built-in defaults. Validation runs
before any output file is created. Exit codes: 0 success, 1 validation or
usage error, 2 runtime or I/O error. ECHT_WORKERS sets the default worker
count for the experiment grid.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import CubeGeometry
from .detector import ScanConfig, scan
from .evaluate import report
from .forests import (
    ClassForest,
    ForestParams,
    RegForest,
    train_class_forest,
    train_reg_forest,
)
from .scoremap import (
    ECModel,
    SamplerConfig,
    Variant,
    assemble_training_set,
    standard_ht_weights,
    train,
)
from .serialize import (
    dump_model_text,
    load_forest,
    load_model,
    read_annotations,
    read_dataset,
    read_detections,
    save_forest,
    save_model,
    write_confusion,
    write_dataset,
    write_detections,
)
from .synth import (
    CorruptionParams,
    SolverBudget,
    SynthConfig,
    forest_training_arrays,
    generate,
    run_class_experiment,
    run_temporal_experiment,
    scripted_votes,
)
from .voter import VotedSequence, forest_votes

__all__ = ["main"]

_WORKERS_ENV = "ECHT_WORKERS"
_DEFAULT_WINDOWS = (8, 12, 16, 24, 32, 48)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # route argparse's sys.exit(2) through the 0/1/2 exit-code contract
    def error(self, message: str) -> None:  # type: ignore[override]
        raise _UsageError(f"{self.prog}: {message}")


# -- value parsers (shared by flags and the config file) ----------------------


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(v) for v in text.split(","))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.strip().split(","))


def _int_pair(text: str) -> tuple[int, int]:
    vals = _ints(text)
    if len(vals) != 2:
        raise ValueError(f"expected two comma-separated integers, got {text!r}")
    return vals[0], vals[1]


def _variant(text: str) -> Variant:
    try:
        return Variant(text)
    except ValueError:
        names = ", ".join(v.value for v in Variant)
        raise ValueError(f"unknown variant {text!r} (choose from {names})") from None


def _variants(text: str) -> tuple[Variant, ...]:
    return tuple(_variant(v) for v in text.strip().split(","))


def _one_of(*choices: str) -> Callable[[str], str]:
    def conv(text: str) -> str:
        if text not in choices:
            raise ValueError(f"expected one of {', '.join(choices)}, got {text!r}")
        return text

    conv.__name__ = "choice"
    return conv


# argparse prints the converter's __name__ in its usage errors
for _conv, _name in (
    (_bool, "boolean"),
    (_ints, "integer list"),
    (_floats, "number list"),
    (_int_pair, "integer pair"),
    (_variant, "variant"),
    (_variants, "variant list"),
):
    _conv.__name__ = _name


# -- option tables -------------------------------------------------------------

# (flag, config key, parser, default, help); config key None = flag only
_Opt = tuple[str, "str | None", Callable[[str], object], object, str]

_SYNTH_CONFIG_OPTS: tuple[_Opt, ...] = (
    ("--num-classes", "synth.num_classes", int, None, "action classes"),
    ("--train-clips", "synth.train_clips", int, None, "single-action clips"),
    ("--val-sequences", "synth.val_sequences", int, None, "validation sequences"),
    ("--test-sequences", "synth.test_sequences", int, None, "test sequences"),
    ("--actions-per-sequence", "synth.actions_per_sequence", int, None,
     "actions per long sequence"),
    ("--length-range", "synth.length_range", _int_pair, None,
     "min,max action length"),
    ("--action-lengths", "synth.action_lengths", _ints, None,
     "discrete action lengths (overrides the range)"),
    ("--gap-range", "synth.gap_range", _int_pair, None, "min,max gap"),
    ("--feature-dim", "synth.feature_dim", int, None, "snippet feature dim"),
    ("--separation", "synth.separation", float, None, "prototype separation"),
    ("--feature-noise", "synth.feature_noise", float, None, "feature noise"),
    ("--snippet-len", "synth.snippet_len", int, None, "snippet length"),
)

_GEOMETRY_OPTS: tuple[_Opt, ...] = (
    ("--dev-bins", "geometry.dev_bins", int, None, "deviation bins"),
    ("--vote-bins", "geometry.vote_bins", int, None, "vote bins"),
    ("--dev-range", "geometry.dev_range", float, None,
     "grid half-width in window lengths"),
)

_FOREST_OPTS: tuple[_Opt, ...] = (
    ("--num-trees", "forest.num_trees", int, None, "trees per forest"),
    ("--max-depth", "forest.max_depth", int, None, "tree depth cap"),
    ("--min-leaf-samples", "forest.min_leaf_samples", int, None,
     "smallest splittable node"),
    ("--split-candidates", "forest.num_split_candidates", int, None,
     "random split tests per node"),
    ("--bootstrap", "forest.bootstrap", _bool, None, "bootstrap resampling"),
)

_SVR_OPTS: tuple[_Opt, ...] = (
    ("--epsilon", "svr.epsilon", float, None, "insensitive-tube half width"),
    ("--c", "svr.c", float, None, "regularization weight"),
    ("--tol", "svr.tol", float, None, "solver tolerance"),
    ("--max-iter", "svr.max_iter", int, None, "solver epoch cap"),
)

_SAMPLER_OPTS: tuple[_Opt, ...] = (
    ("--samples-per-annotation", "sampler.samples_per_annotation", int, None,
     "jittered copies per annotation"),
    ("--jitter-frac", "sampler.jitter_frac", float, None,
     "jitter as a fraction of action length"),
    ("--negative-fraction", "sampler.negative_fraction", float, None,
     "background rows per positive row"),
    ("--scale-lengths", "sampler.scale_lengths", _ints, None,
     "window lengths swept over each annotation"),
    ("--background-iou", "sampler.background_iou", float, None,
     "max overlap of a background window"),
)

_SCAN_OPTS: tuple[_Opt, ...] = (
    ("--windows", "scan.window_lengths", _ints, None, "scan window lengths"),
    ("--stride", "scan.stride", int, None, "scan stride"),
    ("--threshold", "scan.threshold", float, None, "detection score floor"),
    ("--nms-iou", "scan.nms_iou", float, None, "suppression overlap"),
)

_ALL_OPTS: tuple[tuple[_Opt, ...], ...] = (
    _SYNTH_CONFIG_OPTS,
    _GEOMETRY_OPTS,
    _FOREST_OPTS,
    _SVR_OPTS,
    _SAMPLER_OPTS,
    _SCAN_OPTS,
)

_EXTRA_CONFIG_KEYS = frozenset(
    {
        "synth.seed",
        "train.variant",
        "train.voter",
        "train.seed",
        "train.ht_sigma",
        "detect.voter",
        "detect.split",
        "experiment.biases",
        "experiment.sigmas",
        "experiment.repeats",
        "experiment.methods",
        "experiment.seed",
        "experiment.workers",
    }
)

_CONFIG_KEYS = _EXTRA_CONFIG_KEYS.union(
    opt[1] for group in _ALL_OPTS for opt in group if opt[1] is not None
)


def _load_config_file(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def _add_options(parser: argparse.ArgumentParser, *groups: tuple[_Opt, ...]) -> None:
    for flag, _, conv, _, help_text in (opt for group in groups for opt in group):
        parser.add_argument(flag, type=conv, default=None, help=help_text)


class _Gather:
    """Flag > config file > default resolution for one parsed command."""

    def __init__(self, args: argparse.Namespace, file_values: dict[str, str]):
        self.args = args
        self.file_values = file_values

    def get(self, flag: str, key: str | None, conv, default):
        value = getattr(self.args, flag.lstrip("-").replace("-", "_"))
        if value is not None:
            return value
        if key is not None and key in self.file_values:
            return conv(self.file_values[key])
        return default

    def group(self, opts: tuple[_Opt, ...], defaults: dict[str, object]) -> dict:
        out = {}
        for flag, key, conv, default, _ in opts:
            name = flag.lstrip("-").replace("-", "_")
            out[name] = self.get(flag, key, conv, defaults.get(name, default))
        return out


def _synth_config(g: _Gather) -> SynthConfig:
    vals = g.group(_SYNTH_CONFIG_OPTS, {})
    fields = {k: v for k, v in vals.items() if v is not None}
    return SynthConfig(**fields)


def _forest_params(g: _Gather) -> ForestParams:
    vals = g.group(_FOREST_OPTS, {})
    rename = {"split_candidates": "num_split_candidates"}
    fields = {rename.get(k, k): v for k, v in vals.items() if v is not None}
    return ForestParams(**fields)


def _solver_budget(g: _Gather) -> SolverBudget:
    vals = g.group(_SVR_OPTS, {})
    fields = {k: v for k, v in vals.items() if v is not None}
    return SolverBudget(**fields)


def _sampler_config(g: _Gather) -> SamplerConfig:
    # scale_lengths defaults to the dataset's action lengths at run time
    vals = g.group(_SAMPLER_OPTS, {})
    fields = {k: v for k, v in vals.items() if v is not None}
    return SamplerConfig(**fields)


def _scan_config(g: _Gather, default_windows: tuple[int, ...] | None) -> ScanConfig:
    vals = g.group(_SCAN_OPTS, {})
    fields = {k: v for k, v in vals.items() if v is not None}
    windows = fields.pop("windows", None)
    if windows is None:
        windows = default_windows or _DEFAULT_WINDOWS
    return ScanConfig(window_lengths=windows, **fields)


def _geometry_or_none(g: _Gather, num_classes: int) -> CubeGeometry | None:
    vals = g.group(_GEOMETRY_OPTS, {})
    if all(v is None for v in vals.values()):
        return None
    fields = {k: v for k, v in vals.items() if v is not None}
    return CubeGeometry(num_classes=num_classes, **fields)


def _default_workers() -> int:
    env = os.environ.get(_WORKERS_ENV)
    if env is None:
        return os.cpu_count() or 1
    try:
        workers = int(env)
    except ValueError:
        raise ValueError(f"{_WORKERS_ENV} must be an integer, got {env!r}") from None
    if workers < 1:
        raise ValueError(f"{_WORKERS_ENV} must be >= 1, got {workers}")
    return workers


# -- synth ---------------------------------------------------------------------


def _build_synth(args: argparse.Namespace) -> dict:
    g = _Gather(args, _load_config_file(args.config))
    return {
        "config": _synth_config(g),
        "seed": g.get("--seed", "synth.seed", int, 0),
        "out": Path(args.out),
    }


def _run_synth(job: dict) -> int:
    dataset = generate(job["config"], seed=job["seed"])
    manifest = write_dataset(dataset, job["out"], job["seed"])
    counts = manifest["counts"]
    print(
        f"wrote {job['out']}: K={job['config'].num_classes}"
        f" train={counts['train']} val={counts['val']} test={counts['test']}"
        f" annotations={counts['annotations']} snippets={counts['snippets']}"
    )
    print(f"config_hash={manifest['config_hash']}")
    return 0


# -- train ---------------------------------------------------------------------


def _build_train(args: argparse.Namespace) -> dict:
    g = _Gather(args, _load_config_file(args.config))
    geometry = g.group(_GEOMETRY_OPTS, {})
    job = {
        "data": Path(args.data),
        "out": Path(args.out),
        "variant": g.get("--variant", "train.variant", _variant, Variant.ECHT),
        "voter": g.get("--voter", "train.voter", _one_of("forest", "scripted"),
                       "forest"),
        "seed": g.get("--seed", "train.seed", int, 0),
        "ht_sigma": g.get("--ht-sigma", "train.ht_sigma", float, 1.0),
        "dev_bins": 8 if geometry["dev_bins"] is None else geometry["dev_bins"],
        "vote_bins": 8 if geometry["vote_bins"] is None else geometry["vote_bins"],
        "dev_range": 0.75 if geometry["dev_range"] is None else geometry["dev_range"],
        "forest_params": _forest_params(g),
        "budget": _solver_budget(g),
        "sampler": _sampler_config(g),
        "class_forest_out": Path(args.class_forest_out)
        if args.class_forest_out
        else Path(f"{args.out}.class-forest"),
        "reg_forest_out": Path(args.reg_forest_out)
        if args.reg_forest_out
        else Path(f"{args.out}.reg-forest"),
    }
    # fail-fast probe; the real class count comes from the dataset
    CubeGeometry(job["dev_bins"], job["vote_bins"], 2, job["dev_range"])
    return job


def _run_train(job: dict) -> int:
    dataset, _ = read_dataset(job["data"])
    geometry = CubeGeometry(
        job["dev_bins"], job["vote_bins"], dataset.config.num_classes,
        job["dev_range"],
    )
    seeds = np.random.SeedSequence(job["seed"]).generate_state(4)

    if job["voter"] == "forest":
        snips, labels, s_off, e_off, lens = forest_training_arrays(dataset.train)
        class_forest = train_class_forest(
            snips, labels, geometry.num_classes, job["forest_params"],
            seed=int(seeds[0]),
        )
        reg_forest = train_reg_forest(
            snips, labels, s_off, e_off, lens, geometry.num_classes,
            geometry.vote_bins, geometry.dev_range, job["forest_params"],
            seed=int(seeds[1]),
        )
        voted = [
            VotedSequence(
                seq_id=s.seq_id,
                length=s.length,
                votes=tuple(forest_votes(class_forest, reg_forest, s.snippets)),
                annotations=s.annotations,
            )
            for s in dataset.train
        ]
    else:
        class_forest = reg_forest = None
        voted = [
            scripted_votes(s, CorruptionParams(), geometry) for s in dataset.train
        ]

    if job["variant"] is Variant.STANDARD_HT:
        model = ECModel(
            geometry,
            Variant.STANDARD_HT,
            standard_ht_weights(geometry, job["ht_sigma"]),
            ht_sigma=job["ht_sigma"],
        )
        print(f"fixed hough weights; ht_sigma={job['ht_sigma']:g} recorded")
    else:
        sampler = job["sampler"]
        if not sampler.scale_lengths:
            sampler = replace(
                sampler,
                scale_lengths=dataset.config.action_lengths or _DEFAULT_WINDOWS,
            )
        budget = job["budget"]
        training_set = assemble_training_set(
            voted, geometry, sampler, seed=int(seeds[2])
        )
        model = train(
            training_set,
            job["variant"],
            ht_sigma=job["ht_sigma"],
            epsilon=budget.epsilon,
            c=budget.c,
            tol=budget.tol,
            max_iter=budget.max_iter,
            seed=int(seeds[3]),
        )
        for y in range(geometry.num_classes):
            state = "true" if model.converged[y] else "false"
            print(f"class {y}: converged={state}")

    save_model(model, job["out"])
    print(f"wrote {job['out']}")
    if class_forest is not None:
        save_forest(class_forest, job["class_forest_out"])
        save_forest(reg_forest, job["reg_forest_out"])
        print(f"wrote {job['class_forest_out']}")
        print(f"wrote {job['reg_forest_out']}")
    return 0


# -- detect --------------------------------------------------------------------


def _build_detect(args: argparse.Namespace) -> dict:
    g = _Gather(args, _load_config_file(args.config))
    job = {
        "model": Path(args.model),
        "data": Path(args.data),
        "out": Path(args.out),
        "split": g.get("--split", "detect.split", _one_of("train", "val", "test"),
                       "test"),
        "voter": g.get("--voter", "detect.voter", _one_of("forest", "scripted"),
                       "forest"),
        "class_forest": Path(args.class_forest)
        if args.class_forest
        else Path(f"{args.model}.class-forest"),
        "reg_forest": Path(args.reg_forest)
        if args.reg_forest
        else Path(f"{args.model}.reg-forest"),
        "scan_gather": g,
    }
    # windows default to the dataset's action lengths, known only at run time
    _scan_config(g, None)
    return job


def _load_typed_forest(path: Path, want: type) -> ClassForest | RegForest:
    forest = load_forest(path)
    if not isinstance(forest, want):
        raise ValueError(
            f"{path}: expected a {want.__name__} container, found"
            f" {type(forest).__name__}"
        )
    return forest


def _run_detect(job: dict) -> int:
    model = load_model(job["model"])
    dataset, _ = read_dataset(job["data"])
    geometry = model.geometry
    if geometry.num_classes != dataset.config.num_classes:
        raise ValueError(
            f"geometry mismatch: model {job['model']} has"
            f" {geometry.num_classes} classes, dataset {job['data']} has"
            f" {dataset.config.num_classes}"
        )
    scan_config = _scan_config(
        job["scan_gather"], dataset.config.action_lengths or None
    )

    sequences = getattr(dataset, job["split"])
    if job["voter"] == "forest":
        class_forest = _load_typed_forest(job["class_forest"], ClassForest)
        reg_forest = _load_typed_forest(job["reg_forest"], RegForest)
        if class_forest.num_classes != geometry.num_classes:
            raise ValueError(
                f"geometry mismatch: model {job['model']} has"
                f" {geometry.num_classes} classes, forest"
                f" {job['class_forest']} has {class_forest.num_classes}"
            )
        if (reg_forest.vote_bins, reg_forest.dev_range) != (
            geometry.vote_bins,
            geometry.dev_range,
        ):
            raise ValueError(
                f"geometry mismatch: model {job['model']} bins"
                f" ({geometry.vote_bins}, {geometry.dev_range}), forest"
                f" {job['reg_forest']} bins"
                f" ({reg_forest.vote_bins}, {reg_forest.dev_range})"
            )
        if class_forest.feature_dim != dataset.config.feature_dim:
            raise ValueError(
                f"geometry mismatch: forest {job['class_forest']} expects"
                f" feature dim {class_forest.feature_dim}, dataset"
                f" {job['data']} has {dataset.config.feature_dim}"
            )
        votes = {
            s.seq_id: forest_votes(class_forest, reg_forest, s.snippets)
            for s in sequences
        }
    else:
        votes = {
            s.seq_id: scripted_votes(s, CorruptionParams(), geometry).votes
            for s in sequences
        }

    detections = {
        s.seq_id: scan(model, votes[s.seq_id], s.length, scan_config)
        for s in sequences
    }
    write_detections(job["out"], detections)
    total = sum(len(d) for d in detections.values())
    print(f"wrote {job['out']}: {total} detections across {len(sequences)} sequences")
    return 0


# -- eval ----------------------------------------------------------------------


def _build_eval(args: argparse.Namespace) -> dict:
    if args.num_classes is not None and args.num_classes < 2:
        raise ValueError(f"--num-classes must be >= 2, got {args.num_classes}")
    return {
        "detections": Path(args.detections),
        "annotations": Path(args.annotations),
        "confusion_out": Path(args.confusion_out)
        if args.confusion_out
        else Path(f"{args.detections}.confusion"),
        "num_classes": args.num_classes,
    }


def _run_eval(job: dict) -> int:
    detections = read_detections(job["detections"])
    annotations = read_annotations(job["annotations"])
    seq_ids = sorted(set(detections) | set(annotations))
    groups = [
        (detections.get(sid, []), annotations.get(sid, [])) for sid in seq_ids
    ]
    labels = [d.label for dets, _ in groups for d in dets]
    labels += [a.label for _, anns in groups for a in anns]
    num_classes = job["num_classes"]
    if num_classes is None:
        num_classes = max(max(labels, default=1) + 1, 2)
    elif labels and num_classes <= max(labels):
        raise ValueError(
            f"--num-classes {num_classes} but labels reach {max(labels)}"
        )
    rep = report(groups, num_classes)
    print(f"sequences={len(seq_ids)} annotations={rep.tp + rep.fn}")
    print(f"tp={rep.tp} fp={rep.fp} fn={rep.fn}")
    print(f"precision={rep.precision!r} recall={rep.recall!r} f1={rep.f1!r}")
    print(f"mean_start_deviation={rep.mean_start_deviation!r}")
    write_confusion(job["confusion_out"], rep.confusion)
    print(f"wrote {job['confusion_out']}")
    return 0


# -- experiment ------------------------------------------------------------


def _build_experiment(args: argparse.Namespace) -> dict:
    g = _Gather(args, _load_config_file(args.config))
    kind = args.kind
    config = _synth_config(g)
    default_biases = (0.0, 2.0, 5.0, 10.0) if kind == "temporal" else (0, 1, 3, 8)
    scan_given = any(
        v is not None for v in g.group(_SCAN_OPTS, {}).values()
    ) or bool(g.file_values.keys() & {k for _, k, *_ in _SCAN_OPTS})
    job = {
        "kind": kind,
        "config": config,
        "out": Path(args.out),
        "summary_out": Path(args.summary_out)
        if args.summary_out
        else Path(f"{args.out}.summary"),
        "biases": g.get("--biases", "experiment.biases", _floats, default_biases),
        "sigmas": g.get("--sigmas", "experiment.sigmas", _floats,
                        (0.0, 0.5, 1.0, 2.0, 4.0)),
        "repeats": g.get("--repeats", "experiment.repeats", int, 10),
        "methods": g.get("--methods", "experiment.methods", _variants,
                         (Variant.ECHT, Variant.STANDARD_HT)),
        "seed": g.get("--seed", "experiment.seed", int, 0),
        "workers": g.get("--workers", "experiment.workers", int,
                         _default_workers()),
        "geometry": _geometry_or_none(g, config.num_classes),
        "scan_config": _scan_config(g, config.action_lengths or None)
        if scan_given
        else None,
        "budget": _solver_budget(g),
    }
    if job["workers"] < 1:
        raise ValueError(f"--workers must be >= 1, got {job['workers']}")
    return job


def _run_experiment(job: dict) -> int:
    runner = run_temporal_experiment if job["kind"] == "temporal" else run_class_experiment
    start = time.perf_counter()
    table = runner(
        job["config"],
        job["biases"],
        job["sigmas"],
        job["repeats"],
        methods=job["methods"],
        geometry=job["geometry"],
        scan_config=job["scan_config"],
        budget=job["budget"],
        workers=job["workers"],
        seed=job["seed"],
    )
    wall = time.perf_counter() - start
    per_frame_ms = 1000.0 * table.seconds / max(table.frames, 1)
    timing = (
        f"# wall_clock_s={wall:.3f} scanned_frames={table.frames}"
        f" per_frame_ms={per_frame_ms:.4f}\n"
    )
    Path(job["out"]).write_text(table.to_csv())
    Path(job["summary_out"]).write_text(table.summary_csv() + timing)
    print(f"wrote {job['out']} ({len(table.rows)} rows)")
    print(f"wrote {job['summary_out']}")
    print(timing.lstrip("# ").rstrip())
    return 0


# -- inspect-model ---------------------------------------------------------


def _build_inspect(args: argparse.Namespace) -> dict:
    return {
        "model": Path(args.model),
        "out": Path(args.out) if args.out else None,
    }


def _run_inspect(job: dict) -> int:
    text = dump_model_text(load_model(job["model"]))
    if job["out"] is None:
        sys.stdout.write(text)
    else:
        Path(job["out"]).write_text(text)
        print(f"wrote {job['out']}")
    return 0


# -- parser ------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="echt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="master seed")

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    common(p)
    p.add_argument("--out", required=True, help="output dataset directory")
    _add_options(p, _SYNTH_CONFIG_OPTS)
    p.set_defaults(build=_build_synth, run=_run_synth)

    p = sub.add_parser("train", help="train voters and a score-map model")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--variant", type=_variant, default=None,
                   help="echt, echt-t, echt-c, or standard-ht")
    p.add_argument("--voter", type=_one_of("forest", "scripted"), default=None,
                   help="snippet voter (scripted reads ground truth)")
    p.add_argument("--ht-sigma", type=float, default=None,
                   help="hough kernel width in bins")
    p.add_argument("--class-forest-out", default=None,
                   help="class forest file (default: <out>.class-forest)")
    p.add_argument("--reg-forest-out", default=None,
                   help="offset forest file (default: <out>.reg-forest)")
    _add_options(p, _GEOMETRY_OPTS, _FOREST_OPTS, _SVR_OPTS, _SAMPLER_OPTS)
    p.set_defaults(build=_build_train, run=_run_train)

    p = sub.add_parser("detect", help="scan sequences with a trained model")
    common(p)
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="detections file to write")
    p.add_argument("--split", type=_one_of("train", "val", "test"), default=None,
                   help="dataset split to scan (default test)")
    p.add_argument("--voter", type=_one_of("forest", "scripted"), default=None,
                   help="snippet voter (scripted reads ground truth)")
    p.add_argument("--class-forest", default=None,
                   help="class forest file (default: <model>.class-forest)")
    p.add_argument("--reg-forest", default=None,
                   help="offset forest file (default: <model>.reg-forest)")
    _add_options(p, _SCAN_OPTS)
    p.set_defaults(build=_build_detect, run=_run_detect)

    p = sub.add_parser("eval", help="score detections against annotations")
    p.add_argument("--detections", required=True, help="detections file")
    p.add_argument("--annotations", required=True, help="annotations file")
    p.add_argument("--confusion-out", default=None,
                   help="confusion matrix file (default: <detections>.confusion)")
    p.add_argument("--num-classes", type=int, default=None,
                   help="class count (default: inferred from labels)")
    p.set_defaults(build=_build_eval, run=_run_eval)

    p = sub.add_parser("experiment", help="run a corruption-grid experiment")
    common(p)
    p.add_argument("--kind", required=True, choices=("temporal", "class"),
                   help="offset-corruption or class-corruption grid")
    p.add_argument("--out", required=True, help="results table file")
    p.add_argument("--summary-out", default=None,
                   help="summary file (default: <out>.summary)")
    p.add_argument("--biases", type=_floats, default=None, help="bias grid B")
    p.add_argument("--sigmas", type=_floats, default=None, help="noise grid")
    p.add_argument("--repeats", type=int, default=None, help="seeded repeats")
    p.add_argument("--methods", type=_variants, default=None,
                   help="comma-separated variants")
    p.add_argument("--workers", type=int, default=None,
                   help=f"parallel cells (default: {_WORKERS_ENV} or cpu count)")
    _add_options(p, _SYNTH_CONFIG_OPTS, _GEOMETRY_OPTS, _SCAN_OPTS, _SVR_OPTS)
    p.set_defaults(build=_build_experiment, run=_run_experiment)

    p = sub.add_parser("inspect-model", help="dump model weights as text")
    p.add_argument("--model", required=True, help="model file")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.set_defaults(build=_build_inspect, run=_run_inspect)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SystemExit as err:  # --help
        return int(err.code or 0)

    try:
        job = args.build(args)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    try:
        return args.run(job)
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
