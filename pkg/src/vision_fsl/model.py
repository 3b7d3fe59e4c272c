"""Context-aware network: role-tagged tokens, dual-context fusion layers and a
multi-head cosine readout over support prototypes."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ndmath as nd
from .errors import ContractError
from .graph import GraphStore
from .ndmath import ParamStore, Value
from .tasks import Episode

TAU_MIN, TAU_MAX = 0.01, 100.0


@dataclass(frozen=True)
class NetConfig:
    in_dim: int
    hidden_dim: int = 256
    attn_heads: int = 4
    num_layers: int = 2
    ffn_dim: int = 512
    readout_heads: int = 3
    readout_dim: int = 64
    k_neigh: int = 30
    max_way: int = 10
    tau_init: float = 10.0
    init_std: float = 0.02
    no_local: bool = False
    no_global: bool = False
    no_task_context: bool = False

    def __post_init__(self):
        counts = ("in_dim", "hidden_dim", "attn_heads", "num_layers", "ffn_dim",
                  "readout_heads", "readout_dim", "k_neigh", "max_way")
        for name in counts:
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.hidden_dim % self.attn_heads:
            raise ContractError(f"hidden_dim {self.hidden_dim} not divisible by attn_heads {self.attn_heads}")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def init_params(cfg: NetConfig, rng: np.random.Generator) -> ParamStore:
    d, std = cfg.hidden_dim, cfg.init_std
    ps = ParamStore()

    def normal(*shape):
        return rng.normal(0.0, std, size=shape)

    ps.add("embed.W_f", normal(cfg.in_dim, d))
    ps.add("embed.e_role", normal(cfg.max_way, d))
    ps.add("embed.e_mask", normal(d))
    ps.add("embed.norm.gamma", np.ones(d))
    ps.add("embed.norm.beta", np.zeros(d))
    for layer in range(cfg.num_layers):
        p = f"layer{layer}"
        ps.add(f"{p}.norm1.gamma", np.ones(d))
        ps.add(f"{p}.norm1.beta", np.zeros(d))
        for view in ("local", "global"):
            for w in ("Wq", "Wk", "Wv", "Wo"):
                ps.add(f"{p}.{view}.{w}", normal(d, d))
        ps.add(f"{p}.gate.W", normal(2 * d, 1))
        ps.add(f"{p}.gate.b", np.zeros(1))
        ps.add(f"{p}.norm2.gamma", np.ones(d))
        ps.add(f"{p}.norm2.beta", np.zeros(d))
        ps.add(f"{p}.ffn.W1", normal(d, cfg.ffn_dim))
        ps.add(f"{p}.ffn.b1", np.zeros(cfg.ffn_dim))
        ps.add(f"{p}.ffn.W2", normal(cfg.ffn_dim, d))
        ps.add(f"{p}.ffn.b2", np.zeros(d))
    ps.add("final_norm.gamma", np.ones(d))
    ps.add("final_norm.beta", np.zeros(d))
    for h in range(cfg.readout_heads):
        ps.add(f"readout.head{h}.W", normal(d, cfg.readout_dim))
    ps.add("readout.tau", np.full(cfg.readout_heads, cfg.tau_init))
    return ps


@dataclass
class EpisodeBatch:
    """Inputs for one forward pass; task nodes are ordered support first, then query."""

    nodes: np.ndarray          # (T,) graph ids of task nodes
    roles: np.ndarray          # (T,) relative label for support, MASK for query
    neighbor_nodes: np.ndarray  # (U,) graph ids of every distinct neighbor-block node
    neighbor_slots: np.ndarray  # (T, k) index into neighbor_nodes, padded with 0
    neighbor_mask: np.ndarray   # (T, k) True where a slot is real
    support_idx: np.ndarray
    support_labels: np.ndarray
    query_idx: np.ndarray
    n_way: int
    mask_role: int = field(default=-1)

    @property
    def num_task(self) -> int:
        return len(self.nodes)


def sample_neighbors(g: GraphStore, v: int, k: int, seed: int) -> np.ndarray:
    """All neighbors when degree <= k, else k drawn without replacement; isolated nodes use themselves.

    The draw depends only on (seed, v), never on where v sits in the episode.
    """
    nb = g.indices[g.indptr[v]:g.indptr[v + 1]]
    if len(nb) == 0:
        return np.array([v], dtype=np.int64)
    if len(nb) <= k:
        return nb
    return np.sort(np.random.default_rng([seed, v]).choice(nb, size=k, replace=False))


def make_batch(ep: Episode, g: GraphStore, cfg: NetConfig, neighbor_seed: int = 0) -> EpisodeBatch:
    if ep.n_way > cfg.max_way:
        raise ContractError(f"{ep.n_way}-way episode exceeds the role table size {cfg.max_way}")
    nodes = np.array(ep.support_nodes + ep.query, dtype=np.int64)
    s = len(ep.support)
    roles = np.full(len(nodes), -1, dtype=np.int64)
    roles[:s] = ep.support_labels
    blocks = [sample_neighbors(g, int(v), cfg.k_neigh, neighbor_seed) for v in nodes]
    width = max(len(b) for b in blocks)
    uniq, inverse = np.unique(np.concatenate(blocks), return_inverse=True)
    slots = np.zeros((len(nodes), width), dtype=np.int64)
    mask = np.zeros((len(nodes), width), dtype=bool)
    pos = 0
    for i, b in enumerate(blocks):
        slots[i, :len(b)] = inverse[pos:pos + len(b)]
        mask[i, :len(b)] = True
        pos += len(b)
    return EpisodeBatch(nodes, roles, uniq, slots, mask, np.arange(s), np.asarray(ep.support_labels),
                        np.arange(s, len(nodes)), ep.n_way)


def task_normalize(x):
    """Center episode features on their mean."""
    x = nd.as_value(x)
    if x.shape[0] == 0:
        raise ContractError("task_normalize needs at least one node")
    return x - nd.mean_rows(x)


def _ln(x, params, prefix):
    return nd.layer_norm(x, params[f"{prefix}.gamma"], params[f"{prefix}.beta"])


def init_tokens(x_hat, roles, params: ParamStore, cfg: NetConfig):
    """LayerNorm(W_f x + role embedding); role -1 selects the mask embedding."""
    roles = np.asarray(roles)
    if (roles >= cfg.max_way).any():
        raise ContractError(f"role id {int(roles.max())} >= role table size {cfg.max_way}")
    table = nd.concat([params["embed.e_role"], nd.reshape(params["embed.e_mask"], (1, -1))], axis=0)
    role_rows = np.where(roles < 0, cfg.max_way, roles)
    if cfg.no_task_context:
        role_rows = np.full_like(role_rows, cfg.max_way)
    e = nd.take_rows(table, role_rows)
    return _ln(nd.matmul(x_hat, params["embed.W_f"]) + e, params, "embed.norm")


def embed_context(x_hat, params: ParamStore):
    """Neighbor tokens: projected and normalized, no role embedding."""
    return _ln(nd.matmul(x_hat, params["embed.W_f"]), params, "embed.norm")


def _split_heads(x, heads):
    *lead, d = x.shape
    return nd.reshape(x, (*lead, heads, d // heads))


def local_attention(u, ctx, slots, mask, params, prefix, heads):
    """Each token attends over its own neighbor block."""
    t, k = slots.shape
    d = u.shape[1]
    dh = d // heads
    q = _split_heads(nd.matmul(u, params[f"{prefix}.Wq"]), heads)               # (T, H, dh)
    keys = _split_heads(nd.matmul(ctx, params[f"{prefix}.Wk"]), heads)          # (U, H, dh)
    vals = _split_heads(nd.matmul(ctx, params[f"{prefix}.Wv"]), heads)
    kb = nd.reshape(nd.take_rows(keys, slots.reshape(-1)), (t, k, heads, dh))
    vb = nd.reshape(nd.take_rows(vals, slots.reshape(-1)), (t, k, heads, dh))
    scores = nd.einsum("thd,tkhd->thk", q, kb) * (1.0 / np.sqrt(dh))
    attn = nd.softmax(scores, axis=-1, mask=mask[:, None, :])
    out = nd.einsum("thk,tkhd->thd", attn, vb)
    return nd.matmul(nd.reshape(out, (t, d)), params[f"{prefix}.Wo"])


def global_attention(u, support_idx, params, prefix, heads):
    """Every token attends over the support tokens."""
    if len(support_idx) == 0:
        raise ContractError("global attention needs a non-empty support set")
    t, d = u.shape
    us = nd.take_rows(u, support_idx)
    q = _split_heads(nd.matmul(u, params[f"{prefix}.Wq"]), heads)
    keys = _split_heads(nd.matmul(us, params[f"{prefix}.Wk"]), heads)
    vals = _split_heads(nd.matmul(us, params[f"{prefix}.Wv"]), heads)
    scores = nd.einsum("thd,shd->ths", q, keys) * (1.0 / np.sqrt(d // heads))
    attn = nd.softmax(scores, axis=-1)
    return nd.matmul(nd.reshape(nd.einsum("ths,shd->thd", attn, vals), (t, d)), params[f"{prefix}.Wo"])


def dual_context_layer(h, ctx, batch: EpisodeBatch, params: ParamStore, cfg: NetConfig, layer: int,
                       trace: dict | None = None):
    """Pre-norm fusion block plus FFN, both residual.

    The structural and task views are mixed by a per-node scalar gate; ablation
    flags drop either view (or both, leaving only the FFN path).
    """
    p = f"layer{layer}"
    u = _ln(h, params, f"{p}.norm1")
    use_local, use_global = not cfg.no_local, not cfg.no_global
    z_struct = local_attention(u, ctx, batch.neighbor_slots, batch.neighbor_mask, params,
                               f"{p}.local", cfg.attn_heads) if use_local else None
    z_task = global_attention(u, batch.support_idx, params, f"{p}.global", cfg.attn_heads) if use_global else None
    if use_local and use_global:
        alpha = nd.sigmoid(nd.matmul(nd.concat([z_struct, z_task], axis=-1), params[f"{p}.gate.W"])
                           + params[f"{p}.gate.b"])
        fused = (1.0 - alpha) * z_struct + alpha * z_task
        if trace is not None:
            trace.setdefault("alpha", []).append(alpha.data[:, 0].copy())
    else:
        fused = z_struct if use_local else z_task
    if trace is not None:
        trace.setdefault("fused", []).append(None if fused is None else fused.data.copy())
    if fused is not None:
        h = h + fused
    f = _ln(h, params, f"{p}.norm2")
    f = nd.matmul(nd.gelu(nd.matmul(f, params[f"{p}.ffn.W1"]) + params[f"{p}.ffn.b1"]), params[f"{p}.ffn.W2"])
    return h + f + params[f"{p}.ffn.b2"]


def head_embeddings(z, params: ParamStore, cfg: NetConfig) -> list:
    return [nd.matmul(z, params[f"readout.head{h}.W"]) for h in range(cfg.readout_heads)]


def readout(heads: list, support_idx, support_labels, query_idx, n_way: int, params: ParamStore):
    """Mean of per-head scaled cosine similarities between queries and class prototypes."""
    support_labels = np.asarray(support_labels)
    counts = np.bincount(support_labels, minlength=n_way)
    if len(counts) > n_way or (counts == 0).any():
        raise ContractError(f"every class needs support nodes; counts per class: {counts.tolist()}")
    avg = np.zeros((n_way, len(support_idx)))
    avg[support_labels, np.arange(len(support_idx))] = 1.0
    avg /= counts[:, None]
    tau = nd.clamp(params["readout.tau"], TAU_MIN, TAU_MAX)
    total = None
    for h, e in enumerate(heads):
        protos = nd.matmul(nd.Value(avg), nd.take_rows(e, support_idx))
        s = nd.cosine_matrix(nd.take_rows(e, query_idx), protos) * tau[h]
        total = s if total is None else total + s
    return total * (1.0 / len(heads))


@dataclass
class ForwardOutput:
    logits: Value
    heads: list
    batch: EpisodeBatch
    trace: dict


def forward_episode(ep: Episode, g: GraphStore, features: np.ndarray, params: ParamStore, cfg: NetConfig,
                    mode: str = "eval", rng: np.random.Generator | None = None,
                    neighbor_seed: int = 0, noise_std: float = 0.0) -> ForwardOutput:
    """One pass over an episode: center, embed, fuse ``num_layers`` times, read out.

    ``mode='train'`` adds Gaussian input noise of std ``noise_std`` drawn from ``rng``. Neighbor
    sampling is keyed on ``neighbor_seed`` and node id only.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    batch = make_batch(ep, g, cfg, neighbor_seed)
    x = features[batch.nodes]
    xn = features[batch.neighbor_nodes]
    if mode == "train" and noise_std > 0:
        if rng is None:
            raise ContractError("train mode needs an rng for noise injection")
        x = x + rng.normal(0.0, noise_std, size=x.shape)
        xn = xn + rng.normal(0.0, noise_std, size=xn.shape)
    x_hat = task_normalize(x)
    h = init_tokens(x_hat, batch.roles, params, cfg)
    ctx = embed_context(nd.Value(xn - x.mean(axis=0)), params) if not cfg.no_local else None
    trace: dict = {}
    for layer in range(cfg.num_layers):
        h = dual_context_layer(h, ctx, batch, params, cfg, layer, trace)
    z = _ln(h, params, "final_norm")
    heads = head_embeddings(z, params, cfg)
    logits = readout(heads, batch.support_idx, batch.support_labels, batch.query_idx, batch.n_way, params)
    return ForwardOutput(logits, heads, batch, trace)
