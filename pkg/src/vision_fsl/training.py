"""Unsupervised meta-training on pseudo-tasks and fine-tuning-free meta-testing."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ndmath as nd
from .container import read_arrays
from .errors import ConfigurationError, ContractError, VisionError
from .features import AdaptiveFeatures
from .graph import ClassSplit, GraphStore
from .losses import ce_label_smoothing_loss, contrastive_loss
from .model import NetConfig, forward_episode
from .ndmath import OptimizerState, ParamStore
from .tasks import Episode, TaskGenConfig, gen_eval_episode, gen_pseudo_task

log = logging.getLogger(__name__)


class TrainingError(VisionError):
    """Training aborted; ``episode`` holds the offending task."""

    def __init__(self, message: str, episode: Episode | None = None):
        super().__init__(message)
        self.episode = episode


@dataclass(frozen=True)
class TrainConfig:
    episodes_total: int = 5000
    lr: float = 2e-4
    lr_floor: float = 1e-6
    weight_decay: float = 1e-4
    label_smoothing: float = 0.1
    lam: float = 0.5
    con_tau: float = 0.5
    noise_std: float = 0.02
    eval_every: int = 200
    val_episodes: int = 50
    n_way: int = 2
    k_shot: int = 5
    m_query: int = 5
    eval_m_query: int = 10
    pool_size: int = 4096
    train_inputs: str = "adaptive"
    seed: int = 0

    def __post_init__(self):
        if self.train_inputs not in ("adaptive", "raw"):
            raise ContractError(f"train_inputs must be 'adaptive' or 'raw', got {self.train_inputs!r}")
        if self.lam < 0:
            raise ContractError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ContractError(f"label smoothing must lie in [0, 1), got {self.label_smoothing}")
        if self.con_tau <= 0:
            raise ContractError(f"contrastive temperature must be > 0, got {self.con_tau}")
        if self.episodes_total < 0 or self.eval_every < 1:
            raise ContractError("episodes_total must be >= 0 and eval_every >= 1")

    def task_config(self, num_nodes: int) -> TaskGenConfig:
        need = self.n_way * (self.k_shot + self.m_query) + self.n_way
        pool = max(min(self.pool_size, num_nodes - self.n_way), need)
        return TaskGenConfig(self.n_way, self.k_shot, self.m_query, pool, self.seed)


@dataclass
class LossTerms:
    ce: nd.Value
    con: nd.Value
    total: nd.Value


def episode_loss(out, ep: Episode, cfg: TrainConfig) -> LossTerms:
    """L_total = L_CE + lam * L_Con for one forward output."""
    b = out.batch
    ce = ce_label_smoothing_loss(out.logits, ep.query_truth, cfg.label_smoothing)
    con = contrastive_loss(out.heads, b.support_idx, b.support_labels, b.query_idx, ep.query_truth, cfg.con_tau)
    return LossTerms(ce, con, ce + con * cfg.lam)


def predict(logits) -> np.ndarray:
    """Index of the highest score per query row."""
    return np.argmax(np.asarray(getattr(logits, "data", logits)), axis=1)


def episode_accuracy(ep: Episode, g: GraphStore, features, params: ParamStore, cfg: NetConfig,
                     neighbor_seed: int = 0) -> float:
    with nd.no_grad():
        out = forward_episode(ep, g, features, params, cfg, "eval", neighbor_seed=neighbor_seed)
    return float(np.mean(predict(out.logits) == np.asarray(ep.query_truth)))


def _episode_seed(*keys) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


@dataclass
class TrainResult:
    params: ParamStore
    log: list = field(default_factory=list)
    best_val: float | None = None
    best_step: int | None = None
    val_history: list = field(default_factory=list)


def validation_accuracy(g, split, features, params, net_cfg, cfg: TrainConfig) -> float | None:
    """Mean accuracy over a fixed, seeded set of labeled val episodes; None when val is too small."""
    accs = []
    for e in range(cfg.val_episodes):
        rng = np.random.default_rng([cfg.seed, 1, e])
        try:
            ep = gen_eval_episode(g, split, "val", cfg.n_way, cfg.k_shot, cfg.eval_m_query, rng)
        except ConfigurationError as exc:
            log.warning("skipping validation: %s", exc)
            return None
        accs.append(episode_accuracy(ep, g, features, params, net_cfg, _episode_seed(cfg.seed, 1, e)))
    return float(np.mean(accs))


def train(g: GraphStore, af: AdaptiveFeatures, params: ParamStore, opt: OptimizerState, net_cfg: NetConfig,
          cfg: TrainConfig, split: ClassSplit | None = None, dump_dir=None, eval_features=None) -> TrainResult:
    """Meta-train on pseudo-tasks built from ``af``; keep the best-validating weights.

    Network inputs are the adaptive features unless ``cfg.train_inputs`` is
    'raw'; pseudo-tasks are always built in adaptive-feature space. Validation
    uses labeled val-class episodes (model selection only) on ``eval_features``
    (raw features by default). Without a split, the final weights are kept.
    """
    eval_features = g.features if eval_features is None else eval_features
    inputs = af.x_task if cfg.train_inputs == "adaptive" else g.features
    tcfg = cfg.task_config(g.num_nodes)
    res = TrainResult(params)
    best_state = None
    for step in range(cfg.episodes_total):
        rng = np.random.default_rng([cfg.seed, 0, step])
        ep = gen_pseudo_task(af, tcfg, rng)
        out = forward_episode(ep, g, inputs, params, net_cfg, "train", rng,
                              neighbor_seed=_episode_seed(cfg.seed, 0, step), noise_std=cfg.noise_std)
        terms = episode_loss(out, ep, cfg)
        ce, con, total = terms.ce.item(), terms.con.item(), terms.total.item()
        if not all(math.isfinite(v) for v in (ce, con, total)):
            where = ""
            if dump_dir is not None:
                path = Path(dump_dir) / f"nonfinite-step{step}.json"
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(json.dumps({"step": step, "ce": repr(ce), "con": repr(con),
                                            "episode": ep.to_record()}, sort_keys=True))
                where = f" (episode dumped to {path})"
            raise TrainingError(f"non-finite loss at step {step}: ce={ce} con={con}{where}", ep)
        terms.total.backward()
        lr = nd.adamw_step(params, opt)
        res.log.append({"step": step, "ce": ce, "con": con, "total": total, "lr": lr})
        last = step + 1 == cfg.episodes_total
        if split is not None and ((step + 1) % cfg.eval_every == 0 or last):
            acc = validation_accuracy(g, split, eval_features, params, net_cfg, cfg)
            if acc is not None:
                res.val_history.append((step + 1, acc))
                log.info("step %d: ce %.4f con %.4f val acc %.4f", step + 1, ce, con, acc)
                if res.best_val is None or acc > res.best_val:
                    res.best_val, res.best_step, best_state = acc, step + 1, params.state()
    if best_state is not None:
        params.load_state(best_state)
    return res


@dataclass
class EvalReport:
    dataset: str
    n_way: int
    k_shot: int
    m_query: int
    run_accuracies: list
    episodes_per_run: int
    runs: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(not 0.0 <= a <= 1.0 for a in self.run_accuracies):
            raise ContractError(f"accuracies outside [0, 1]: {self.run_accuracies}")

    @property
    def setting(self) -> str:
        return f"{self.n_way}-way {self.k_shot}-shot"

    @property
    def mean(self) -> float:
        return float(np.mean(self.run_accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.run_accuracies))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(setting=self.setting, mean=self.mean, std=self.std)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def table_row(self) -> str:
        return f"{self.dataset} | {self.setting} | {100 * self.mean:.2f} ± {100 * self.std:.2f}"

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        path.with_suffix(".txt").write_text(self.table_row() + "\n", encoding="utf-8")


def meta_test(g: GraphStore, split: ClassSplit, params: ParamStore, cfg: NetConfig, n_way: int, k_shot: int,
              m_query: int = 10, runs: int = 5, episodes: int = 100, seed: int = 0, features=None,
              phase: str = "test", dataset: str = "", workers: int = 1, config: dict | None = None) -> EvalReport:
    """Frozen-parameter evaluation: one eval-mode forward per episode, argmax prediction.

    Episodes are seeded by (seed, run, episode) so results do not depend on ``workers``.
    """
    features = g.features if features is None else features
    before = params.digest()
    run_acc = []
    for r in range(runs):
        eps = [gen_eval_episode(g, split, phase, n_way, k_shot, m_query, np.random.default_rng([seed, 2, r, e]))
               for e in range(episodes)]

        def one(e):
            return episode_accuracy(eps[e], g, features, params, cfg, _episode_seed(seed, 2, r, e))

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                accs = list(pool.map(one, range(episodes)))
        else:
            accs = [one(e) for e in range(episodes)]
        run_acc.append(float(np.mean(accs)))
    if params.digest() != before or params.has_grads():
        raise ContractError("parameters changed during meta-test")
    return EvalReport(dataset, n_way, k_shot, m_query, run_acc, episodes, runs, dict(config or {}))


def save_checkpoint(path, params: ParamStore, net_cfg: NetConfig, meta: dict | None = None) -> None:
    """Parameters plus the network config and its digest; byte-identical for identical inputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    full = {"net": asdict(net_cfg), "net_digest": net_cfg.digest()}
    full.update(meta or {})
    params.save(path, full)


def load_checkpoint(path) -> tuple[ParamStore, NetConfig, dict]:
    arrays, meta = read_arrays(path)
    net_cfg = NetConfig(**meta["net"])
    if net_cfg.digest() != meta.get("net_digest"):
        raise ContractError(f"{path}: network config digest mismatch")
    params = ParamStore()
    for name, arr in arrays.items():
        params.add(name, arr)
    return params, net_cfg, meta
