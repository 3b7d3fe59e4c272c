"""Structure-adaptive node features.

Each node's raw features are blended with their one-hop symmetric-normalized
average, weighted by how well the two agree (cosine mapped to [0, 1]).
This is parameter-free preprocessing done once per graph.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .container import read_arrays, write_arrays
from .errors import ContractError
from .graph import GraphStore

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AdaptiveFeatures:
    x_task: np.ndarray
    gate: np.ndarray
    x_smooth: np.ndarray
    graph_hash: str = ""


def normalized_adjacency(g: GraphStore) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 as a sparse matrix."""
    n = g.num_nodes
    deg = np.diff(g.indptr).astype(np.float64) + 1.0
    dinv = 1.0 / np.sqrt(deg)
    rows = np.repeat(np.arange(n), np.diff(g.indptr))
    a = sp.csr_matrix((dinv[rows] * dinv[g.indices], g.indices, g.indptr), shape=(n, n))
    return a + sp.diags(dinv * dinv, format="csr")


def smooth(g: GraphStore) -> np.ndarray:
    """One simplified-graph-convolution step over the raw features."""
    return np.asarray(normalized_adjacency(g) @ g.features)


def gate(x_raw: np.ndarray, x_smooth: np.ndarray) -> np.ndarray:
    """Per-node agreement in [0, 1]; rows with a zero norm on either side get 0.5."""
    if x_raw.shape != x_smooth.shape:
        raise ContractError(f"gate: shapes {x_raw.shape} and {x_smooth.shape} differ")
    nr = np.linalg.norm(x_raw, axis=1)
    ns = np.linalg.norm(x_smooth, axis=1)
    ok = (nr > 0) & (ns > 0)
    cos = np.zeros(len(x_raw))
    cos[ok] = (x_raw[ok] * x_smooth[ok]).sum(1) / (nr[ok] * ns[ok])
    return (np.clip(cos, -1.0, 1.0) + 1.0) / 2.0


def blend(x_raw: np.ndarray, x_smooth: np.ndarray, g: np.ndarray) -> np.ndarray:
    w = g[:, None]
    return (1.0 - w) * x_raw + w * x_smooth


def fuse(g: GraphStore) -> AdaptiveFeatures:
    xs = smooth(g)
    gv = gate(g.features, xs)
    return AdaptiveFeatures(blend(g.features, xs, gv), gv, xs, g.content_hash())


def cache_path(cache_dir, g: GraphStore) -> Path:
    return Path(cache_dir) / f"adaptive-{g.content_hash()[:16]}.bin"


def save_cache(af: AdaptiveFeatures, path) -> None:
    write_arrays(path, {"gate": af.gate, "x_task": af.x_task, "x_smooth": af.x_smooth},
                 meta={"graph_hash": af.graph_hash})


def load_cache(path, g: GraphStore | None = None) -> AdaptiveFeatures:
    arrays, meta = read_arrays(path)
    if g is not None and meta.get("graph_hash") != g.content_hash():
        raise ContractError(f"{path}: cache was built for a different graph")
    return AdaptiveFeatures(arrays["x_task"], arrays["gate"], arrays["x_smooth"], meta.get("graph_hash", ""))


def load_or_compute(g: GraphStore, cache_dir=None) -> AdaptiveFeatures:
    """Adaptive features for ``g``, reusing a cache file keyed by graph content hash."""
    if cache_dir is None:
        return fuse(g)
    path = cache_path(cache_dir, g)
    if path.exists():
        log.info("loading adaptive features from %s", path)
        return load_cache(path, g)
    af = fuse(g)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_cache(af, path)
    log.info("wrote adaptive features to %s", path)
    return af
