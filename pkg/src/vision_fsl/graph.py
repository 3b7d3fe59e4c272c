"""Immutable graph storage: features, CSR adjacency, labels and class splits.

On-disk formats (UTF-8, LF line endings):

* features: ``node_id<TAB>f_0 f_1 ... f_{F-1}`` (dense) or
  ``node_id<TAB>idx:val idx:val ...`` (sparse). Lines starting with ``#`` are
  comments; ``# num_features=F`` fixes the width of a sparse file.
* edges: ``u v`` per line, undirected.
* labels: ``node_id class_id`` per line; absent nodes are unlabeled.
* split: three lines ``train: 0,1,2``, ``val: ...``, ``test: ...``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

UNLABELED = -1


@dataclass(frozen=True, eq=False)
class GraphStore:
    features: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    labels: np.ndarray
    num_classes: int
    _hash: str = field(default="", repr=False)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        """Undirected edge count."""
        return len(self.indices) // 2

    def degree(self, v=None):
        deg = np.diff(self.indptr)
        return deg if v is None else int(deg[v])

    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels != UNLABELED)

    def nodes_of_class(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def content_hash(self) -> str:
        return self._hash

    def same_structure(self, other: "GraphStore") -> bool:
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.labels, other.labels)
            and self.num_classes == other.num_classes
        )


@dataclass(frozen=True)
class ClassSplit:
    train_classes: frozenset
    val_classes: frozenset
    test_classes: frozenset

    def classes(self, phase: str) -> list[int]:
        try:
            group = {"train": self.train_classes, "val": self.val_classes, "test": self.test_classes}[phase]
        except KeyError:
            raise ValueError(f"unknown phase {phase!r}; expected train, val or test") from None
        return sorted(group)


def _hash_arrays(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype.str).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def build_graph(features, edges, labels=None, num_classes=None) -> GraphStore:
    """Validate raw arrays and build a GraphStore.

    ``edges`` is an (E, 2) integer array of undirected pairs; they are
    symmetrized, de-duplicated and stripped of self-loops. ``labels`` uses
    ``UNLABELED`` (-1) for missing entries.
    """
    x = np.array(features, dtype=np.float64, copy=True)
    if x.ndim != 2:
        raise ValidationError(f"features must be 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise ValidationError(f"non-finite feature at node {bad[0]}, column {bad[1]}")
    n = x.shape[0]

    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        row = int(np.flatnonzero((e < 0).any(1) | (e >= n).any(1))[0])
        raise ValidationError(f"edge {tuple(e[row])} references a node outside [0, {n})")
    e = e[e[:, 0] != e[:, 1]]
    both = np.concatenate([e, e[:, ::-1]])
    keys = np.unique(both[:, 0] * n + both[:, 1])
    src, dst = keys // n, keys % n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    indices = dst.astype(np.int64)

    if labels is None:
        y = np.full(n, UNLABELED, dtype=np.int64)
    else:
        y = np.asarray(labels, dtype=np.int64).copy()
        if y.shape != (n,):
            raise ValidationError(f"labels shape {y.shape} does not match {n} nodes")
    present = y[y != UNLABELED]
    if present.size and present.min() < 0:
        raise ValidationError(f"negative class id {present.min()}")
    inferred = int(present.max()) + 1 if present.size else 0
    if num_classes is None:
        num_classes = inferred
    elif inferred > num_classes:
        raise ValidationError(f"label {inferred - 1} outside [0, {num_classes})")

    for a in (x, indptr, indices, y):
        a.setflags(write=False)
    return GraphStore(x, indptr, indices, y, int(num_classes), _hash_arrays(x, indptr, indices, y))


def neighbors(g: GraphStore, v: int) -> np.ndarray:
    """Neighbor ids of ``v`` in ascending order."""
    if not 0 <= v < g.num_nodes:
        raise IndexError(f"node {v} out of range [0, {g.num_nodes})")
    return g.indices[g.indptr[v]:g.indptr[v + 1]]


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            yield lineno, line


def _parse_int(tok, path, lineno, what):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(path, lineno, f"expected integer {what}, got {tok!r}") from None


def read_features(path) -> np.ndarray:
    declared = None
    rows = {}
    sparse_width = 0
    dense_width = None
    for lineno, line in _data_lines(path):
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("num_features="):
                declared = _parse_int(body.split("=", 1)[1], path, lineno, "feature count")
            continue
        node_tok, sep, rest = line.partition("\t")
        if not sep:
            raise ParseError(path, lineno, "missing TAB after node id")
        node = _parse_int(node_tok, path, lineno, "node id")
        if node < 0:
            raise ParseError(path, lineno, f"negative node id {node}")
        if node in rows:
            raise ParseError(path, lineno, f"duplicate feature row for node {node}")
        toks = rest.split()
        if toks and ":" in toks[0]:
            idx, vals = [], []
            for t in toks:
                i, colon, val = t.partition(":")
                if not colon:
                    raise ParseError(path, lineno, f"mixed dense/sparse entry {t!r}")
                idx.append(_parse_int(i, path, lineno, "feature index"))
                try:
                    vals.append(float(val))
                except ValueError:
                    raise ParseError(path, lineno, f"bad feature value {val!r}") from None
            if min(idx) < 0:
                raise ParseError(path, lineno, "negative feature index")
            sparse_width = max(sparse_width, max(idx) + 1)
            rows[node] = ("s", idx, vals)
        elif toks:
            try:
                vals = [float(t) for t in toks]
            except ValueError:
                raise ParseError(path, lineno, "bad dense feature value") from None
            if dense_width is None:
                dense_width = len(vals)
            elif len(vals) != dense_width:
                raise ParseError(path, lineno, f"expected {dense_width} features, got {len(vals)}")
            rows[node] = ("d", vals)
        else:
            rows[node] = ("s", [], [])

    if not rows:
        raise ValidationError(f"{path}: no feature rows")
    n = max(rows) + 1
    missing = sorted(set(range(n)) - set(rows))
    if missing:
        raise ValidationError(f"{path}: no feature row for node {missing[0]}")
    width = declared if declared is not None else max(dense_width or 0, sparse_width)
    if dense_width is not None and dense_width != width:
        raise ValidationError(f"{path}: dense width {dense_width} disagrees with declared {width}")
    if sparse_width > width:
        raise ValidationError(f"{path}: feature index {sparse_width - 1} outside declared width {width}")
    x = np.zeros((n, width), dtype=np.float64)
    for node, row in rows.items():
        if row[0] == "d":
            x[node] = row[1]
        elif row[1]:
            x[node, row[1]] = row[2]
    if not np.all(np.isfinite(x)):
        bad = int(np.argwhere(~np.isfinite(x))[0][0])
        raise ValidationError(f"{path}: non-finite feature for node {bad}")
    return x


def read_edges(path) -> np.ndarray:
    pairs = []
    for lineno, line in _data_lines(path):
        if line.startswith("#"):
            continue
        toks = line.split()
        if len(toks) != 2:
            raise ParseError(path, lineno, f"expected 'u v', got {line!r}")
        pairs.append((_parse_int(toks[0], path, lineno, "node id"), _parse_int(toks[1], path, lineno, "node id")))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def read_labels(path, num_nodes: int) -> np.ndarray:
    y = np.full(num_nodes, UNLABELED, dtype=np.int64)
    for lineno, line in _data_lines(path):
        if line.startswith("#"):
            continue
        toks = line.split()
        if len(toks) != 2:
            raise ParseError(path, lineno, f"expected 'node_id class_id', got {line!r}")
        node = _parse_int(toks[0], path, lineno, "node id")
        cls = _parse_int(toks[1], path, lineno, "class id")
        if not 0 <= node < num_nodes:
            raise ValidationError(f"{path}:{lineno}: node {node} outside [0, {num_nodes})")
        if cls < 0:
            raise ValidationError(f"{path}:{lineno}: negative class id {cls}")
        y[node] = cls
    return y


def load_graph(features_path, edges_path, labels_path) -> GraphStore:
    x = read_features(features_path)
    e = read_edges(edges_path)
    y = read_labels(labels_path, x.shape[0])
    return build_graph(x, e, y)


def load_dataset(directory) -> tuple[GraphStore, ClassSplit | None]:
    """Load ``features.txt``, ``edges.txt``, ``labels.txt`` and, if present, ``split.txt``."""
    d = Path(directory)
    g = load_graph(d / "features.txt", d / "edges.txt", d / "labels.txt")
    split = load_split(d / "split.txt", g) if (d / "split.txt").exists() else None
    return g, split


def load_split(path, g: GraphStore) -> ClassSplit:
    groups = {}
    for lineno, line in _data_lines(path):
        if line.startswith("#"):
            continue
        name, colon, rest = line.partition(":")
        name = name.strip()
        if not colon or name not in ("train", "val", "test"):
            raise ParseError(path, lineno, f"expected 'train:', 'val:' or 'test:', got {line!r}")
        if name in groups:
            raise ParseError(path, lineno, f"duplicate group {name!r}")
        ids = [t.strip() for t in rest.split(",") if t.strip()]
        groups[name] = [_parse_int(t, path, lineno, "class id") for t in ids]
    missing = {"train", "val", "test"} - set(groups)
    if missing:
        raise ParseError(path, 0, f"missing group(s) {sorted(missing)}")
    for name, ids in groups.items():
        for c in ids:
            if not 0 <= c < g.num_classes:
                raise ValidationError(f"{path}: class {c} in {name} outside [0, {g.num_classes})")
        if len(set(ids)) != len(ids):
            raise ValidationError(f"{path}: repeated class id in {name}")
    sets = {k: frozenset(v) for k, v in groups.items()}
    for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
        overlap = sets[a] & sets[b]
        if overlap:
            raise ValidationError(f"{path}: classes {sorted(overlap)} appear in both {a} and {b}")
    return ClassSplit(sets["train"], sets["val"], sets["test"])


def _fmt(v: float) -> str:
    return repr(float(v))


def write_graph(g: GraphStore, features_path, edges_path, labels_path, sparse=None) -> None:
    """Write ``g`` in the on-disk text formats; ``load_graph`` reverses this exactly."""
    x = g.features
    if sparse is None:
        sparse = np.count_nonzero(x) < 0.25 * x.size
    with open(features_path, "w", encoding="utf-8", newline="\n") as fh:
        if sparse:
            fh.write(f"# num_features={g.num_features}\n")
            for v in range(g.num_nodes):
                nz = np.flatnonzero(x[v])
                fh.write(f"{v}\t" + " ".join(f"{i}:{_fmt(x[v, i])}" for i in nz) + "\n")
        else:
            for v in range(g.num_nodes):
                fh.write(f"{v}\t" + " ".join(_fmt(t) for t in x[v]) + "\n")
    with open(edges_path, "w", encoding="utf-8", newline="\n") as fh:
        for u in range(g.num_nodes):
            for w in neighbors(g, u):
                if u < w:
                    fh.write(f"{u} {w}\n")
    with open(labels_path, "w", encoding="utf-8", newline="\n") as fh:
        for v in g.labeled_nodes():
            fh.write(f"{v} {g.labels[v]}\n")


def write_split(split: ClassSplit, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for name in ("train", "val", "test"):
            fh.write(f"{name}: " + ",".join(str(c) for c in split.classes(name)) + "\n")
