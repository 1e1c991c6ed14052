"""Persistent formats: binary containers and versioned plain-text tables.

Models and forests are stored as little-endian binary containers with a
magic string and version header; docs/FORMATS.md holds the byte-exact
layout. Both have a plain-text dump mode for inspection and diffing.
Datasets, annotations, detections, and confusion matrices use CSV with a
`# format: <tag>` first line so readers can reject foreign files early.

Loaders raise ValueError on malformed content (bad magic, version,
truncation, trailing bytes, header mismatch); OSError from the filesystem
is left to the caller.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import Annotation, CubeGeometry, Interval, Snippet
from .detector import Detection
from .forests import ClassForest, ForestParams, RegForest, Tree
from .scoremap import ECModel, Variant

__all__ = [
    "config_hash",
    "dump_forest_text",
    "dump_model_text",
    "forest_from_bytes",
    "forest_to_bytes",
    "load_forest",
    "load_model",
    "model_from_bytes",
    "model_to_bytes",
    "read_annotations",
    "read_confusion",
    "read_dataset",
    "read_detections",
    "save_forest",
    "save_model",
    "write_annotations",
    "write_confusion",
    "write_dataset",
    "write_detections",
]

_MODEL_MAGIC = b"ECHTMODL"
_FOREST_MAGIC = b"ECHTFRST"
_VERSION = 1

_CLASS_FOREST = 0
_REG_FOREST = 1

_VARIANT_CODE = {
    Variant.ECHT: 0,
    Variant.ECHT_T: 1,
    Variant.ECHT_C: 2,
    Variant.STANDARD_HT: 3,
}
_CODE_VARIANT = {code: var for var, code in _VARIANT_CODE.items()}


class _Reader:
    """Cursor over a byte buffer; every read is bounds-checked."""

    def __init__(self, data: bytes, what: str) -> None:
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError(f"{self.what} truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()

    def done(self) -> None:
        extra = len(self.data) - self.pos
        if extra:
            raise ValueError(f"{self.what} has {extra} trailing bytes")


# -- model container ---------------------------------------------------------


def model_to_bytes(model: ECModel) -> bytes:
    g = model.geometry
    buf = bytearray(_MODEL_MAGIC)
    buf += struct.pack("<IB", _VERSION, _VARIANT_CODE[model.variant])
    buf += struct.pack("<IIId", g.dev_bins, g.vote_bins, g.num_classes, g.dev_range)
    buf += struct.pack("<d", model.ht_sigma)
    buf += np.asarray(model.converged, dtype=np.uint8).tobytes()
    buf += np.ascontiguousarray(model.weights, dtype="<f8").tobytes()
    return bytes(buf)


def model_from_bytes(data: bytes) -> ECModel:
    r = _Reader(data, "model container")
    if r.take(8) != _MODEL_MAGIC:
        raise ValueError("not a model container (bad magic)")
    version = r.u32()
    if version != _VERSION:
        raise ValueError(f"unsupported model container version {version}")
    code = r.u8()
    if code not in _CODE_VARIANT:
        raise ValueError(f"unknown variant code {code}")
    variant = _CODE_VARIANT[code]
    dev_bins, vote_bins, num_classes = r.u32(), r.u32(), r.u32()
    geometry = CubeGeometry(dev_bins, vote_bins, num_classes, r.f64())
    ht_sigma = r.f64()
    converged = r.array("u1", num_classes).astype(bool)
    weights = r.array("<f8", num_classes * geometry.feature_dim)
    r.done()
    return ECModel(
        geometry,
        variant,
        weights.reshape(num_classes, geometry.feature_dim),
        ht_sigma=ht_sigma,
        converged=converged,
    )


def save_model(model: ECModel, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path: str | Path) -> ECModel:
    return model_from_bytes(Path(path).read_bytes())


def dump_model_text(model: ECModel) -> str:
    """Weights reshaped to the cube, one CSV matrix per (class, block,
    vote class) slice: rows are deviation bins, columns vote bins."""
    g = model.geometry
    lines = [
        "# format: echt-model-dump-v1",
        f"# variant={model.variant.value} dev_bins={g.dev_bins}"
        f" vote_bins={g.vote_bins} num_classes={g.num_classes}"
        f" dev_range={g.dev_range!r} ht_sigma={model.ht_sigma!r}",
        "# converged=" + ",".join(str(int(c)) for c in model.converged),
    ]
    for y in range(g.num_classes):
        cube = model.weight_cube(y)
        for b, block in enumerate(("start", "end")):
            for k in range(g.num_classes):
                lines.append(f"# class={y} block={block} vote_class={k}")
                for u in range(g.dev_bins):
                    lines.append(",".join(repr(float(v)) for v in cube[b, u, :, k]))
    return "\n".join(lines) + "\n"


# -- forest container --------------------------------------------------------


def _tree_header(tree: Tree) -> bytes:
    return struct.pack("<II", tree.num_nodes, tree.num_leaves)


def _tree_arrays(tree: Tree) -> bytes:
    return b"".join(
        np.ascontiguousarray(arr, dtype=dt).tobytes()
        for arr, dt in (
            (tree.kind, "i1"),
            (tree.dim_a, "<i4"),
            (tree.dim_b, "<i4"),
            (tree.threshold, "<f8"),
            (tree.left, "<i4"),
            (tree.right, "<i4"),
            (tree.leaf_idx, "<i4"),
        )
    )


def _read_tree(r: _Reader) -> tuple[Tree, int]:
    num_nodes, num_leaves = r.u32(), r.u32()
    tree = Tree(
        kind=r.array("i1", num_nodes),
        dim_a=r.array("<i4", num_nodes),
        dim_b=r.array("<i4", num_nodes),
        threshold=r.array("<f8", num_nodes),
        left=r.array("<i4", num_nodes),
        right=r.array("<i4", num_nodes),
        leaf_idx=r.array("<i4", num_nodes),
    )
    if tree.num_leaves != num_leaves:
        raise ValueError(
            f"{r.what}: tree declares {num_leaves} leaves, arrays hold {tree.num_leaves}"
        )
    return tree, num_leaves


def forest_to_bytes(forest: ClassForest | RegForest) -> bytes:
    is_reg = isinstance(forest, RegForest)
    p = forest.params
    buf = bytearray(_FOREST_MAGIC)
    buf += struct.pack("<IB", _VERSION, _REG_FOREST if is_reg else _CLASS_FOREST)
    buf += struct.pack("<II", forest.num_classes, forest.feature_dim)
    if is_reg:
        buf += struct.pack("<Id", forest.vote_bins, forest.dev_range)
    buf += struct.pack(
        "<IIIIB",
        p.num_trees,
        p.max_depth,
        p.min_leaf_samples,
        p.num_split_candidates,
        int(p.bootstrap),
    )
    buf += struct.pack("<I", len(forest.trees))
    for t, tree in enumerate(forest.trees):
        buf += _tree_header(tree)
        buf += _tree_arrays(tree)
        if is_reg:
            buf += np.asarray(forest.leaf_present[t], dtype=np.uint8).tobytes()
            buf += np.ascontiguousarray(forest.leaf_start[t], dtype="<f8").tobytes()
            buf += np.ascontiguousarray(forest.leaf_end[t], dtype="<f8").tobytes()
        else:
            buf += np.ascontiguousarray(forest.leaf_hists[t], dtype="<f8").tobytes()
    return bytes(buf)


def forest_from_bytes(data: bytes) -> ClassForest | RegForest:
    r = _Reader(data, "forest container")
    if r.take(8) != _FOREST_MAGIC:
        raise ValueError("not a forest container (bad magic)")
    version = r.u32()
    if version != _VERSION:
        raise ValueError(f"unsupported forest container version {version}")
    kind = r.u8()
    if kind not in (_CLASS_FOREST, _REG_FOREST):
        raise ValueError(f"unknown forest kind {kind}")
    num_classes, feature_dim = r.u32(), r.u32()
    if kind == _REG_FOREST:
        vote_bins, dev_range = r.u32(), r.f64()
    params = ForestParams(
        num_trees=r.u32(),
        max_depth=r.u32(),
        min_leaf_samples=r.u32(),
        num_split_candidates=r.u32(),
        bootstrap=bool(r.u8()),
    )
    trees: list[Tree] = []
    hists: list[np.ndarray] = []
    present: list[np.ndarray] = []
    starts: list[np.ndarray] = []
    ends: list[np.ndarray] = []
    for _ in range(r.u32()):
        tree, n_leaves = _read_tree(r)
        trees.append(tree)
        if kind == _REG_FOREST:
            shape = (n_leaves, num_classes, vote_bins)
            present.append(
                r.array("u1", n_leaves * num_classes)
                .astype(bool)
                .reshape(n_leaves, num_classes)
            )
            starts.append(r.array("<f8", int(np.prod(shape))).reshape(shape))
            ends.append(r.array("<f8", int(np.prod(shape))).reshape(shape))
        else:
            hists.append(
                r.array("<f8", n_leaves * num_classes).reshape(n_leaves, num_classes)
            )
    r.done()
    if kind == _REG_FOREST:
        return RegForest(
            num_classes,
            vote_bins,
            dev_range,
            feature_dim,
            params,
            tuple(trees),
            tuple(present),
            tuple(starts),
            tuple(ends),
        )
    return ClassForest(num_classes, feature_dim, params, tuple(trees), tuple(hists))


def save_forest(forest: ClassForest | RegForest, path: str | Path) -> None:
    Path(path).write_bytes(forest_to_bytes(forest))


def load_forest(path: str | Path) -> ClassForest | RegForest:
    return forest_from_bytes(Path(path).read_bytes())


def dump_forest_text(forest: ClassForest | RegForest) -> str:
    """Stable line-per-node dump of every split test and leaf payload."""
    is_reg = isinstance(forest, RegForest)
    p = forest.params
    lines = [
        "# format: echt-forest-dump-v1",
        f"# kind={'regression' if is_reg else 'class'}"
        f" num_classes={forest.num_classes} feature_dim={forest.feature_dim}",
    ]
    if is_reg:
        lines.append(f"# vote_bins={forest.vote_bins} dev_range={forest.dev_range!r}")
    lines.append(
        f"# params num_trees={p.num_trees} max_depth={p.max_depth}"
        f" min_leaf_samples={p.min_leaf_samples}"
        f" num_split_candidates={p.num_split_candidates} bootstrap={int(p.bootstrap)}"
    )
    for t, tree in enumerate(forest.trees):
        lines.append(f"tree {t} nodes={tree.num_nodes} leaves={tree.num_leaves}")
        for n in range(tree.num_nodes):
            if tree.kind[n] < 0:
                lines.append(f"node {n} leaf {int(tree.leaf_idx[n])}")
                continue
            st = tree.split_test(n)
            lines.append(
                f"node {n} {st.kind} a={st.dim_a} b={st.dim_b}"
                f" thr={st.threshold!r}"
                f" left={int(tree.left[n])} right={int(tree.right[n])}"
            )
        if is_reg:
            pres = forest.leaf_present[t]
            for i in range(pres.shape[0]):
                for k in np.flatnonzero(pres[i]):
                    start = ",".join(repr(float(v)) for v in forest.leaf_start[t][i, k])
                    end = ",".join(repr(float(v)) for v in forest.leaf_end[t][i, k])
                    lines.append(f"leaf {i} class {k} start={start} end={end}")
        else:
            for i, hist in enumerate(forest.leaf_hists[t]):
                hist_csv = ",".join(repr(float(v)) for v in hist)
                lines.append(f"leaf {i} hist=" + hist_csv)
    return "\n".join(lines) + "\n"


# -- plain-text tables -------------------------------------------------------


def _write_table(
    path: str | Path, tag: str, columns: Sequence[str], rows: Sequence[Sequence]
) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# format: {tag}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)


def _read_table(path: str | Path, tag: str) -> tuple[list[str], list[list[str]]]:
    """Returns (column header, data rows) after validating the format line."""
    with open(path, newline="") as fh:
        head = fh.readline().rstrip("\n")
        if head != f"# format: {tag}":
            raise ValueError(f"{path}: expected '# format: {tag}', got {head!r}")
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path}: missing column header")
    return rows[0], rows[1:]


def _require_columns(path: str | Path, got: list[str], want: Sequence[str]) -> None:
    if got != list(want):
        raise ValueError(f"{path}: expected columns {list(want)}, got {got}")


_ANNOT_COLS = ("sequence_id", "label", "start", "end")
_DETECT_COLS = ("sequence_id", "label", "start", "end", "score")


def write_annotations(
    path: str | Path, annotations: Mapping[str, Sequence[Annotation]]
) -> None:
    rows = [
        (seq_id, a.label, a.interval.start, a.interval.end)
        for seq_id, anns in annotations.items()
        for a in anns
    ]
    _write_table(path, "echt-annotations-v1", _ANNOT_COLS, rows)


def read_annotations(path: str | Path) -> dict[str, list[Annotation]]:
    header, rows = _read_table(path, "echt-annotations-v1")
    _require_columns(path, header, _ANNOT_COLS)
    out: dict[str, list[Annotation]] = {}
    for seq_id, label, start, end in rows:
        out.setdefault(seq_id, []).append(
            Annotation(int(label), Interval(int(start), int(end)))
        )
    return out


def write_detections(
    path: str | Path, detections: Mapping[str, Sequence[Detection]]
) -> None:
    rows = [
        (seq_id, d.label, d.interval.start, d.interval.end, repr(float(d.score)))
        for seq_id, dets in detections.items()
        for d in dets
    ]
    _write_table(path, "echt-detections-v1", _DETECT_COLS, rows)


def read_detections(path: str | Path) -> dict[str, list[Detection]]:
    header, rows = _read_table(path, "echt-detections-v1")
    _require_columns(path, header, _DETECT_COLS)
    out: dict[str, list[Detection]] = {}
    for seq_id, label, start, end, score in rows:
        out.setdefault(seq_id, []).append(
            Detection(int(label), Interval(int(start), int(end)), float(score))
        )
    return out


def write_confusion(path: str | Path, confusion: np.ndarray) -> None:
    c = np.asarray(confusion)
    with open(path, "w", newline="") as fh:
        fh.write("# format: echt-confusion-v1\n")
        fh.write("# rows: true class, columns: predicted class\n")
        for row in c:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def read_confusion(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        head = fh.readline().rstrip("\n")
        if head != "# format: echt-confusion-v1":
            raise ValueError(f"{path}: expected confusion matrix header, got {head!r}")
        fh.readline()
        rows = [
            [int(v) for v in line.split(",")]
            for line in (ln.strip() for ln in fh)
            if line
        ]
    out = np.asarray(rows, dtype=np.int64)
    if out.ndim != 2 or out.shape[0] != out.shape[1]:
        raise ValueError(f"{path}: confusion matrix must be square, got {out.shape}")
    return out


# -- dataset directory -------------------------------------------------------


def config_hash(config, seed: int) -> str:
    """Digest of the canonical (sorted-key, no-whitespace) JSON of the
    generation inputs; identical inputs give an identical manifest hash."""
    payload = {"config": asdict(config), "seed": int(seed)}
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _snippet_columns(feature_dim: int) -> tuple[str, ...]:
    return (
        "sequence_id",
        "location",
        "owner",
        "snippet_len",
        *(f"f{i}" for i in range(feature_dim)),
    )


def write_dataset(dataset, out_dir: str | Path, seed: int) -> dict:
    """Writes manifest.json, sequences.csv, annotations.csv, snippets.csv.

    Feature values are written with repr so they parse back bit-exact.
    Returns the manifest dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    splits = (("train", dataset.train), ("val", dataset.val), ("test", dataset.test))

    seq_rows = [(s.seq_id, split, s.length) for split, seqs in splits for s in seqs]
    _write_table(
        out / "sequences.csv",
        "echt-sequences-v1",
        ("sequence_id", "split", "length"),
        seq_rows,
    )
    write_annotations(
        out / "annotations.csv",
        {s.seq_id: s.annotations for _, seqs in splits for s in seqs},
    )
    # per-split copies so detections over one split pair with a matching file
    for split, seqs in splits:
        write_annotations(
            out / f"annotations-{split}.csv", {s.seq_id: s.annotations for s in seqs}
        )
    snip_rows = [
        (
            s.seq_id,
            snip.location,
            own,
            snip.snippet_len,
            *(repr(float(v)) for v in snip.features),
        )
        for _, seqs in splits
        for s in seqs
        for snip, own in zip(s.snippets, s.owner)
    ]
    _write_table(
        out / "snippets.csv",
        "echt-snippets-v1",
        _snippet_columns(dataset.config.feature_dim),
        snip_rows,
    )

    manifest = {
        "format": "echt-manifest-v1",
        "seed": int(seed),
        "config": asdict(dataset.config),
        "config_hash": config_hash(dataset.config, seed),
        "counts": {
            "train": len(dataset.train),
            "val": len(dataset.val),
            "test": len(dataset.test),
            "annotations": sum(len(s.annotations) for _, seqs in splits for s in seqs),
            "snippets": sum(len(s.snippets) for _, seqs in splits for s in seqs),
        },
        "prototypes": dataset.prototypes.tolist(),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_dataset(in_dir: str | Path):
    """Rebuilds the dataset from a directory written by write_dataset.

    Returns (dataset, seed). The manifest's config_hash is recomputed and
    must match, so a hand-edited config or seed is rejected.
    """
    from .synth import SynthConfig, SynthDataset, SynthSequence

    d = Path(in_dir)
    with open(d / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "echt-manifest-v1":
        raise ValueError(f"{d}: manifest has format {manifest.get('format')!r}")
    config = SynthConfig(
        **{
            k: tuple(v) if isinstance(v, list) else v
            for k, v in manifest["config"].items()
        }
    )
    seed = int(manifest["seed"])
    if manifest.get("config_hash") != config_hash(config, seed):
        raise ValueError(f"{d}: manifest config_hash does not match config and seed")
    prototypes = np.asarray(manifest["prototypes"], dtype=np.float64)

    header, seq_rows = _read_table(d / "sequences.csv", "echt-sequences-v1")
    _require_columns(d / "sequences.csv", header, ("sequence_id", "split", "length"))
    ann_map = read_annotations(d / "annotations.csv")

    header, snip_rows = _read_table(d / "snippets.csv", "echt-snippets-v1")
    _require_columns(d / "snippets.csv", header, _snippet_columns(config.feature_dim))
    snip_map: dict[str, list[tuple[Snippet, int]]] = {}
    for seq_id, location, owner, snippet_len, *feats in snip_rows:
        snip_map.setdefault(seq_id, []).append(
            (
                Snippet(
                    int(location),
                    np.array([float(v) for v in feats]),
                    snippet_len=int(snippet_len),
                ),
                int(owner),
            )
        )

    splits: dict[str, list[SynthSequence]] = {"train": [], "val": [], "test": []}
    for seq_id, split, length in seq_rows:
        if split not in splits:
            raise ValueError(f"{d}: unknown split {split!r} for {seq_id}")
        pairs = snip_map.get(seq_id, [])
        splits[split].append(
            SynthSequence(
                seq_id,
                int(length),
                tuple(ann_map.get(seq_id, [])),
                tuple(s for s, _ in pairs),
                tuple(o for _, o in pairs),
            )
        )
    dataset = SynthDataset(
        config,
        prototypes,
        tuple(splits["train"]),
        tuple(splits["val"]),
        tuple(splits["test"]),
    )
    return dataset, seed
