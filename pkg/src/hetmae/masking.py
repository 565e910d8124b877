"""Meta-path edge masking (random / degree / attention) and feature masking.

Degree-based weights: raw_e = (out_deg(src_e) + in_deg(dst_e)) / 2, scaled to
sum to 1. Weighted selection draws k indices sequentially without
replacement with renormalized conditional probabilities, so an ordered
sample (x1..xk) has probability

    DW[x1] * DW[x2]/(1-DW[x1]) * ... * DW[xk]/(1 - sum_{j<k} DW[xj]).

Attention-based masking recovers logits z = ln(p) + C from per-destination
normalized coefficients, exponentiates, renormalizes globally, and feeds the
same sampler; the e^C factor cancels under renormalization, so plans do not
depend on C.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .hetgraph import MetaPathGraph

STRATEGIES = ("random", "degree", "attention")


@dataclass
class MaskPlan:
    """Exact record of everything removed in one masking round."""

    strategy: str
    mask_rate: float
    seed: int
    edge_indices: dict = field(default_factory=dict)  # path name -> tuple of edge idx
    edge_counts: dict = field(default_factory=dict)  # path name -> |E| when planned
    node_indices: tuple = ()
    attr_pairs: tuple = ()  # (node, attribute) on remaining nodes
    attr_mask_rate: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "strategy": self.strategy,
                "mask_rate": self.mask_rate,
                "attr_mask_rate": self.attr_mask_rate,
                "seed": self.seed,
                "edge_indices": {k: list(v) for k, v in sorted(self.edge_indices.items())},
                "edge_counts": dict(sorted(self.edge_counts.items())),
                "node_indices": list(self.node_indices),
                "attr_pairs": [list(p) for p in self.attr_pairs],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MaskPlan":
        raw = json.loads(text)
        return cls(
            strategy=raw["strategy"],
            mask_rate=raw["mask_rate"],
            attr_mask_rate=raw.get("attr_mask_rate", 0.0),
            seed=raw["seed"],
            edge_indices={k: tuple(v) for k, v in raw["edge_indices"].items()},
            edge_counts={k: int(v) for k, v in raw.get("edge_counts", {}).items()},
            node_indices=tuple(raw.get("node_indices", ())),
            attr_pairs=tuple(tuple(p) for p in raw.get("attr_pairs", ())),
        )


def _check_rate(rate: float):
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"mask rate must be in [0, 1), got {rate}")


def _plan(strategy, rate, seed, path, indices, n_edges) -> MaskPlan:
    return MaskPlan(
        strategy=strategy,
        mask_rate=rate,
        seed=seed,
        edge_indices={path: tuple(int(i) for i in indices)},
        edge_counts={path: int(n_edges)},
    )


def mask_edges_random(mpg: MetaPathGraph, rate: float, rng: np.random.Generator, seed: int = -1) -> MaskPlan:
    """Uniformly choose floor(rate * |E|) distinct edges."""
    _check_rate(rate)
    k = int(rate * mpg.n_edges)
    chosen = rng.choice(mpg.n_edges, size=k, replace=False) if k else np.empty(0, dtype=np.int64)
    return _plan("random", rate, seed, mpg.spec.name, chosen, mpg.n_edges)


def edge_degree_weights(mpg: MetaPathGraph) -> np.ndarray:
    """Normalized per-edge weights from mean of src out-degree and dst in-degree."""
    if mpg.n_edges == 0:
        raise ValueError("degree weights need at least one edge")
    src, dst = mpg.edges[:, 0], mpg.edges[:, 1]
    raw = (mpg.out_degree[src] + mpg.in_degree[dst]) / 2.0
    return raw / raw.sum()


def sample_without_replacement(weights: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Ordered weighted sample of k distinct indices, renormalizing each draw.

    Each selection consumes one uniform variate and picks index i with
    probability w_i over the remaining total, then zeroes w_i, which realizes
    the renormalized conditional chain exactly. A Fenwick tree keeps the
    per-draw prefix-sum search at O(log n).
    """
    w = np.asarray(weights, dtype=np.float64).copy()
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    support = int(np.count_nonzero(w))
    if k > support:
        raise ValueError(f"cannot draw {k} items from support of size {support}")
    if w.sum() <= 0:
        raise ValueError("weights sum to zero")
    n = w.size
    tree = np.zeros(n + 1)
    tree[1:] = w
    for i in range(1, n + 1):  # O(n) Fenwick build
        j = i + (i & -i)
        if j <= n:
            tree[j] += tree[i]
    total = float(w.sum())
    top_bit = 1 << (n.bit_length() - 1) if n else 0

    def remove(pos, value):
        i = pos + 1
        while i <= n:
            tree[i] -= value
            i += i & -i

    out = np.empty(k, dtype=np.int64)
    for draw in range(k):
        rem = rng.random() * total
        idx = 0
        bit = top_bit
        while bit:
            nxt = idx + bit
            if nxt <= n and tree[nxt] < rem:
                idx = nxt
                rem -= tree[nxt]
            bit >>= 1
        pick = min(idx, n - 1)
        while w[pick] == 0.0:  # float drift can land on an exhausted slot
            pick = (pick + 1) % n
        out[draw] = pick
        total -= w[pick]
        remove(pick, w[pick])
        w[pick] = 0.0
    return out


def mask_edges_by_degree(mpg: MetaPathGraph, rate: float, rng: np.random.Generator, seed: int = -1) -> MaskPlan:
    _check_rate(rate)
    k = int(rate * mpg.n_edges)
    if k == 0:
        return _plan("degree", rate, seed, mpg.spec.name, (), mpg.n_edges)
    chosen = sample_without_replacement(edge_degree_weights(mpg), k, rng)
    return _plan("degree", rate, seed, mpg.spec.name, chosen, mpg.n_edges)


def recover_attention_logits(p: np.ndarray, C: float) -> np.ndarray:
    """Invert a softmax up to its normalizer: z_i = ln(p_i) + C."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0):
        raise ValueError("attention entries must be positive to invert the softmax")
    return np.log(p) + C


def mask_edges_by_attention(
    mpg: MetaPathGraph,
    edge_attention: np.ndarray,
    rate: float,
    rng: np.random.Generator,
    C: float = 0.0,
    seed: int = -1,
) -> MaskPlan:
    """Weighted masking from per-destination attention, renormalized globally.

    edge_attention aligns with mpg.edges (most recent encoder coefficients,
    normalized within each destination segment).
    """
    _check_rate(rate)
    if edge_attention is None:
        raise ValueError("attention masking needs coefficients from a prior encoder pass")
    att = np.asarray(edge_attention, dtype=np.float64).reshape(-1)
    if att.shape[0] != mpg.n_edges:
        raise ValueError(f"attention length {att.shape[0]} != edge count {mpg.n_edges}")
    k = int(rate * mpg.n_edges)
    if k == 0:
        return _plan("attention", rate, seed, mpg.spec.name, (), mpg.n_edges)
    z = recover_attention_logits(att, C)
    weights = np.exp(z - z.max())
    chosen = sample_without_replacement(weights / weights.sum(), k, rng)
    return _plan("attention", rate, seed, mpg.spec.name, chosen, mpg.n_edges)


def plan_edge_masks(
    graphs: dict,
    strategy: str,
    rate: float,
    rng: np.random.Generator,
    attention: dict | None = None,
    C: float = 0.0,
    seed: int = -1,
) -> MaskPlan:
    """One plan covering every meta-path graph, path names in sorted order."""
    if strategy not in STRATEGIES and strategy != "none":
        raise ValueError(f"unknown mask strategy '{strategy}'")
    plan = MaskPlan(strategy=strategy, mask_rate=rate, seed=seed)
    for name in sorted(graphs):
        mpg = graphs[name]
        if strategy == "none":
            part = _plan("none", 0.0, seed, name, (), mpg.n_edges)
        elif strategy == "random":
            part = mask_edges_random(mpg, rate, rng, seed)
        elif strategy == "degree":
            part = mask_edges_by_degree(mpg, rate, rng, seed)
        else:
            att = None if attention is None else attention.get(name)
            if att is None:
                # no coefficients yet (first epoch): fall back to random
                part = mask_edges_random(mpg, rate, rng, seed)
            else:
                part = mask_edges_by_attention(mpg, att, rate, rng, C, seed)
        plan.edge_indices.update(part.edge_indices)
        plan.edge_counts.update(part.edge_counts)
    return plan


def plan_feature_mask(
    n_nodes: int, n_attrs: int, node_rate: float, attr_rate: float, rng: np.random.Generator
):
    """Choose fully masked nodes, then per-entry attribute masks on the rest."""
    _check_rate(node_rate)
    _check_rate(attr_rate)
    n_masked = int(node_rate * n_nodes)
    masked = rng.choice(n_nodes, size=n_masked, replace=False) if n_masked else np.empty(0, dtype=np.int64)
    masked = np.sort(masked)
    attr_pairs = []
    if attr_rate > 0:
        remaining = np.setdiff1d(np.arange(n_nodes), masked, assume_unique=False)
        hits = rng.random((remaining.size, n_attrs)) < attr_rate
        rows, cols = np.nonzero(hits)
        attr_pairs = list(zip(remaining[rows].tolist(), cols.tolist()))
    return tuple(int(i) for i in masked), tuple(attr_pairs)


def mask_node_features(
    X_tar: np.ndarray,
    node_rate: float,
    attr_rate: float,
    mask_token: np.ndarray,
    rng: np.random.Generator,
):
    """Masked copy of the target features plus the node part of a MaskPlan.

    Fully masked rows are replaced by mask_token; on remaining rows each
    entry is independently zeroed with probability attr_rate.
    """
    X_tar = np.asarray(X_tar)
    token = np.asarray(mask_token).reshape(-1)
    if token.shape[0] != X_tar.shape[1]:
        raise ValueError(f"mask token length {token.shape[0]} != feature dim {X_tar.shape[1]}")
    node_idx, attr_pairs = plan_feature_mask(
        X_tar.shape[0], X_tar.shape[1], node_rate, attr_rate, rng
    )
    masked = X_tar.copy()
    if node_idx:
        masked[list(node_idx)] = token
    if attr_pairs:
        rows, cols = zip(*attr_pairs)
        masked[list(rows), list(cols)] = 0.0
    return masked, node_idx, attr_pairs


def apply_mask(mpg: MetaPathGraph, plan: MaskPlan) -> MetaPathGraph:
    """Masked copy of one meta-path graph; the input graph is untouched."""
    name = mpg.spec.name
    expected = plan.edge_counts.get(name)
    if expected is not None and expected != mpg.n_edges:
        raise ValueError(
            f"stale plan for '{name}': planned against {expected} edges, graph has {mpg.n_edges}"
        )
    idx = plan.edge_indices.get(name, ())
    if any(i < 0 or i >= mpg.n_edges for i in idx):
        raise ValueError(f"plan for '{name}' has out-of-range edge indices")
    return mpg.without_edges(idx)


def apply_mask_all(graphs: dict, plan: MaskPlan) -> dict:
    return {name: apply_mask(mpg, plan) for name, mpg in graphs.items()}
