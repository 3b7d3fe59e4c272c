"""Episode construction: unsupervised pseudo-tasks, labeled evaluation episodes,
and anchor-diversity statistics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError, GenerationError
from .features import AdaptiveFeatures
from .graph import UNLABELED, ClassSplit, GraphStore

log = logging.getLogger(__name__)

POOL_RETRIES = 10


@dataclass(frozen=True)
class Episode:
    n_way: int
    k_shot: int
    m_query: int
    support: tuple  # ((node, relative label), ...)
    query: tuple
    query_truth: tuple

    def __post_init__(self):
        if len(self.support) != self.n_way * self.k_shot:
            raise ContractError(f"support has {len(self.support)} nodes, expected {self.n_way * self.k_shot}")
        if len(self.query) != self.n_way * self.m_query or len(self.query_truth) != len(self.query):
            raise ContractError(f"query has {len(self.query)} nodes, expected {self.n_way * self.m_query}")
        counts = np.bincount([lab for _, lab in self.support], minlength=self.n_way)
        if len(counts) != self.n_way or (counts != self.k_shot).any():
            raise ContractError(f"support label counts {counts.tolist()} are not {self.k_shot} per class")
        nodes = self.support_nodes + self.query
        if len(set(nodes)) != len(nodes):
            raise ContractError("a node appears more than once in the episode")

    @property
    def support_nodes(self) -> tuple:
        return tuple(v for v, _ in self.support)

    @property
    def support_labels(self) -> tuple:
        return tuple(lab for _, lab in self.support)

    def to_record(self) -> dict:
        return {
            "n_way": self.n_way,
            "k_shot": self.k_shot,
            "m_query": self.m_query,
            "support": [[int(v), int(lab)] for v, lab in self.support],
            "query": [int(v) for v in self.query],
            "query_truth": [int(t) for t in self.query_truth],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Episode":
        return cls(
            rec["n_way"], rec["k_shot"], rec["m_query"],
            tuple((int(v), int(lab)) for v, lab in rec["support"]),
            tuple(int(v) for v in rec["query"]),
            tuple(int(t) for t in rec["query_truth"]),
        )


def dump_episodes(episodes, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ep in episodes:
            fh.write(json.dumps(ep.to_record(), separators=(",", ":")) + "\n")


def read_episodes(path) -> list[Episode]:
    with open(path, encoding="utf-8") as fh:
        return [Episode.from_record(json.loads(line)) for line in fh if line.strip()]


@dataclass(frozen=True)
class TaskGenConfig:
    n_way: int = 2
    k_shot: int = 5
    m_query: int = 5
    pool_size: int = 4096
    seed: int = 0

    def __post_init__(self):
        if min(self.n_way, self.k_shot) < 1 or self.m_query < 0:
            raise ContractError(f"invalid episode shape N={self.n_way} K={self.k_shot} M={self.m_query}")
        need = self.n_way * (self.k_shot + self.m_query) + self.n_way
        if self.pool_size < need:
            raise ContractError(f"pool_size {self.pool_size} < N(K+M)+N = {need}")


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norm, out=np.zeros_like(x), where=norm > 0)


def _assign_groups(x_task, anchors, pool, per_class):
    """Greedy nearest-candidate selection, masking nodes claimed by earlier anchors."""
    unit_pool = _unit_rows(x_task[pool])
    unit_anchor = _unit_rows(x_task[anchors])
    sims = unit_anchor @ unit_pool.T
    claimed = np.zeros(len(pool), dtype=bool)
    groups = []
    for j in range(len(anchors)):
        free = np.flatnonzero(~claimed)
        if len(free) < per_class:
            raise GenerationError(
                f"candidate pool exhausted at anchor {j}: {len(free)} free nodes, {per_class} needed"
            )
        # highest similarity first, ties by ascending node id
        order = np.lexsort((pool[free], -sims[j, free]))
        chosen = free[order[:per_class]]
        claimed[chosen] = True
        groups.append(pool[chosen])
    return groups


def gen_pseudo_task(af: AdaptiveFeatures, cfg: TaskGenConfig, rng: np.random.Generator,
                    anchors=None) -> Episode:
    """Build one N-way pseudo-task from unlabeled nodes.

    Anchors are drawn uniformly without replacement (or taken from ``anchors``),
    a shared candidate pool is drawn from the remaining nodes, and each anchor in
    turn claims its K+M most cosine-similar unclaimed pool nodes. Up to
    ``POOL_RETRIES`` fresh pools are tried before giving up.
    """
    x = af.x_task
    n = x.shape[0]
    if anchors is None:
        if n < cfg.n_way:
            raise GenerationError(f"graph has {n} nodes, fewer than {cfg.n_way} anchors")
        anchors = rng.choice(n, size=cfg.n_way, replace=False)
    anchors = np.asarray(anchors, dtype=np.int64)
    if len(anchors) != cfg.n_way or len(set(anchors.tolist())) != cfg.n_way:
        raise ContractError(f"need {cfg.n_way} distinct anchors, got {anchors.tolist()}")
    rest = np.setdiff1d(np.arange(n), anchors)
    per_class = cfg.k_shot + cfg.m_query
    last = None
    for _ in range(POOL_RETRIES):
        size = min(cfg.pool_size, len(rest))
        pool = np.sort(rng.choice(rest, size=size, replace=False)) if size < len(rest) else rest
        try:
            groups = _assign_groups(x, anchors, pool, per_class)
        except GenerationError as exc:
            last = exc
            continue
        support, query, truth = [], [], []
        for j, grp in enumerate(groups):
            support += [(int(v), j) for v in grp[:cfg.k_shot]]
            query += [int(v) for v in grp[cfg.k_shot:]]
            truth += [j] * cfg.m_query
        return Episode(cfg.n_way, cfg.k_shot, cfg.m_query, tuple(support), tuple(query), tuple(truth))
    raise GenerationError(f"gave up after {POOL_RETRIES} pools: {last}")


def gen_eval_episode(g: GraphStore, split: ClassSplit, phase: str, n_way: int, k_shot: int,
                     m_query: int, rng: np.random.Generator) -> Episode:
    """Sample a labeled N-way K-shot episode from the classes of ``phase``."""
    per_class = k_shot + m_query
    classes = split.classes(phase)
    sizes = {c: int(np.count_nonzero(g.labels == c)) for c in classes}
    eligible = [c for c in classes if sizes[c] >= per_class]
    if len(eligible) < n_way:
        short = {c: s for c, s in sizes.items() if s < per_class}
        raise ConfigurationError(
            f"{phase} split has {len(eligible)} classes with >= {per_class} labeled nodes, "
            f"{n_way} needed (classes short of nodes: {short or 'none'}; total classes: {len(classes)})"
        )
    picked = rng.choice(eligible, size=n_way, replace=False)
    support, query, truth = [], [], []
    for j, c in enumerate(picked):
        nodes = rng.choice(g.nodes_of_class(int(c)), size=per_class, replace=False)
        support += [(int(v), j) for v in nodes[:k_shot]]
        query += [int(v) for v in nodes[k_shot:]]
        truth += [j] * m_query
    return Episode(n_way, k_shot, m_query, tuple(support), tuple(query), tuple(truth))


def anchor_distinct_probability(c_total: int, n: int) -> float:
    """Probability that ``n`` draws from ``c_total`` equally likely classes are all distinct."""
    if n < 1 or c_total < 1:
        raise ContractError(f"need n >= 1 and c_total >= 1, got n={n}, c_total={c_total}")
    if n > c_total:
        return 0.0
    return math.perm(c_total, n) / c_total**n


def expected_distinct_uniform(c_total: int, n: int) -> float:
    """Mean number of distinct classes among ``n`` independent uniform class draws."""
    return c_total * (1.0 - (1.0 - 1.0 / c_total) ** n)


def anchor_diversity_monte_carlo(g: GraphStore, n: int, trials: int, rng: np.random.Generator,
                                 classes=None) -> float:
    """Mean number of distinct true classes among ``n`` uniformly drawn labeled nodes.

    Unlabeled nodes are never drawn (their count is logged). ``classes``
    restricts the population to nodes of those classes.
    """
    labels = g.labels
    unlabeled = int(np.count_nonzero(labels == UNLABELED))
    if unlabeled:
        log.warning("anchor diversity: excluding %d unlabeled nodes", unlabeled)
    keep = labels != UNLABELED
    if classes is not None:
        keep &= np.isin(labels, list(classes))
    pop = labels[keep]
    if len(pop) < n:
        raise ContractError(f"population of {len(pop)} labeled nodes is smaller than n={n}")
    total = 0
    for _ in range(trials):
        total += len(np.unique(pop[rng.choice(len(pop), size=n, replace=False)]))
    return total / trials
