"""Dataset import (LINQS and Planetoid raw formats) and synthetic graph generators.

Run as a module to convert raw benchmark files into the package's text format::

    python -m vision_fsl.datasets linqs --content cora.content --cites cora.cites \
        --split 3,2,2 --out data/cora
    python -m vision_fsl.datasets planetoid --root raw/citeseer --name citeseer \
        --split 2,2,2 --out data/citeseer
"""

from __future__ import annotations

import argparse
import pickle
from pathlib import Path

import numpy as np

from .graph import UNLABELED, ClassSplit, GraphStore, build_graph, write_graph, write_split


def read_linqs(content_path, cites_path) -> tuple[GraphStore, list[str]]:
    """Parse a LINQS ``.content``/``.cites`` pair.

    Nodes are numbered in content-file order, classes in sorted name order.
    Citations that mention unknown papers are dropped.
    """
    ids, rows, names = [], [], []
    with open(content_path, encoding="utf-8") as fh:
        for line in fh:
            toks = line.split()
            if not toks:
                continue
            ids.append(toks[0])
            rows.append([float(t) for t in toks[1:-1]])
            names.append(toks[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(names))
    cls_index = {c: i for i, c in enumerate(classes)}
    edges = []
    with open(cites_path, encoding="utf-8") as fh:
        for line in fh:
            toks = line.split()
            if len(toks) == 2 and toks[0] in index and toks[1] in index:
                edges.append((index[toks[0]], index[toks[1]]))
    labels = np.array([cls_index[c] for c in names], dtype=np.int64)
    return build_graph(np.array(rows), np.array(edges), labels), classes


def read_planetoid(root, name: str) -> GraphStore:
    """Parse the pickled ``ind.<name>.*`` files.

    Test nodes that are missing from the test index (CiteSeer has 15) are kept
    as isolated-feature, unlabeled rows so the node count matches the graph.
    Requires scipy to unpickle the sparse feature blocks.
    """
    root = Path(root)

    def load(part):
        with open(root / f"ind.{name}.{part}", "rb") as fh:
            return pickle.load(fh, encoding="latin1")

    allx, ally, tx, ty, graph = (load(p) for p in ("allx", "ally", "tx", "ty", "graph"))
    test_idx = np.loadtxt(root / f"ind.{name}.test.index", dtype=np.int64)
    allx = np.asarray(allx.todense())
    tx = np.asarray(tx.todense())
    n = max(len(graph), allx.shape[0] + int(test_idx.max()) - int(test_idx.min()) + 1)
    x = np.zeros((n, allx.shape[1]))
    y = np.full(n, UNLABELED, dtype=np.int64)
    x[: allx.shape[0]] = allx
    y[: ally.shape[0]] = np.where(ally.sum(1) > 0, ally.argmax(1), UNLABELED)
    x[test_idx] = tx
    y[test_idx] = np.where(ty.sum(1) > 0, ty.argmax(1), UNLABELED)
    edges = [(u, w) for u, nbrs in graph.items() for w in nbrs if u < n and w < n]
    return build_graph(x, np.array(edges), y, num_classes=ally.shape[1])


def split_by_class_size(g: GraphStore, sizes: tuple[int, int, int]) -> ClassSplit:
    """Assign the largest classes to train, the next to val, the rest to test.

    Classes are ranked by labeled-node count (descending, ties by id).
    """
    if sum(sizes) > g.num_classes:
        raise ValueError(f"split sizes {sizes} exceed {g.num_classes} classes")
    counts = np.bincount(g.labels[g.labels != UNLABELED], minlength=g.num_classes)
    order = sorted(range(g.num_classes), key=lambda c: (-counts[c], c))
    a, b, c = sizes
    return ClassSplit(frozenset(order[:a]), frozenset(order[a:a + b]), frozenset(order[a + b:a + b + c]))


def save_dataset(g: GraphStore, split: ClassSplit | None, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_graph(g, out / "features.txt", out / "edges.txt", out / "labels.txt")
    if split is not None:
        write_split(split, out / "split.txt")
    return out


def cluster_graph(
    n_nodes: int = 200,
    n_clusters: int = 2,
    dim: int = 16,
    separation: float = 4.0,
    p_in: float = 0.05,
    p_out: float = 0.0,
    noise_dims: int = 0,
    noise_std: float = 1.0,
    rng: np.random.Generator | None = None,
) -> GraphStore:
    """Gaussian clusters with planted intra-cluster edges.

    Cluster centers sit on scaled coordinate axes so every pair of centers is
    ``separation`` unit standard deviations apart. ``noise_dims`` appends
    pure-noise columns of std ``noise_std`` that carry no class signal.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if dim < n_clusters:
        raise ValueError("dim must be >= n_clusters")
    labels = np.arange(n_nodes) % n_clusters
    centers = np.zeros((n_clusters, dim))
    centers[np.arange(n_clusters), np.arange(n_clusters)] = separation / np.sqrt(2.0)
    x = centers[labels] + rng.standard_normal((n_nodes, dim))
    if noise_dims:
        x = np.hstack([x, noise_std * rng.standard_normal((n_nodes, noise_dims))])
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n_nodes, n_nodes)) < prob, k=1)
    edges = np.argwhere(upper)
    return build_graph(x, edges, labels, num_classes=n_clusters)


def _main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m vision_fsl.datasets")
    sub = ap.add_subparsers(dest="fmt", required=True)
    p = sub.add_parser("linqs")
    p.add_argument("--content", required=True)
    p.add_argument("--cites", required=True)
    q = sub.add_parser("planetoid")
    q.add_argument("--root", required=True)
    q.add_argument("--name", required=True)
    for s in (p, q):
        s.add_argument("--split", required=True, help="train,val,test class counts, e.g. 3,2,2")
        s.add_argument("--out", required=True)
    args = ap.parse_args(argv)
    if args.fmt == "linqs":
        g, _ = read_linqs(args.content, args.cites)
    else:
        g = read_planetoid(args.root, args.name)
    sizes = tuple(int(t) for t in args.split.split(","))
    out = save_dataset(g, split_by_class_size(g, sizes), args.out)
    print(f"{out}: {g.num_nodes} nodes, {g.num_edges} edges, {g.num_features} features, {g.num_classes} classes")
    return 0


if __name__ == "__main__":
    raise SystemExit(_main())
