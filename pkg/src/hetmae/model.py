"""Encoder over masked meta-path graphs, intra-path propagation, and decoder.

The encoder projects (masked) target features and runs stacked attention
layers per meta-path graph, then fuses paths with semantic attention.
Enhancement walks each meta-path from its midpoint type outward to the
target end, pulling intermediate-node features (projected by a per-type
two-layer MLP) into the target embeddings hop by hop. A single attention
layer over the union of masked meta-path edges plus a linear head maps back
to the input feature dimension for reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .config import TrainConfig
from .diffcore import Tape, Tensor
from .hetgraph import HeteroGraph, MetaPathGraph, MetaPathSpec
from .masking import MaskPlan


@dataclass
class EncodedState:
    per_path: dict  # path name -> (N_tar, d) Tensor
    fused: Tensor  # (N_tar, d)
    edge_attention: dict  # path name -> (E_masked,) numpy, masked-graph edges
    full_edge_attention: dict  # path name -> (E_full,) numpy, unmasked edges
    alpha: np.ndarray  # semantic weights per path, sorted path-name order
    alpha_tensor: Tensor  # (P, 1), on tape


@dataclass
class ForwardResult:
    encoded: EncodedState
    enhanced: Tensor  # H used for decoding and as the embedding output
    decoded: Tensor  # (N_tar, d_in_tar)


# ---------------------------------------------------------------------------
# parameters


def _xavier(rng, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def _normal(rng, rows, cols, dtype, std=0.02):
    return (rng.normal(size=(rows, cols)) * std).astype(dtype)


def init_params(g: HeteroGraph, cfg: TrainConfig, rng: np.random.Generator, dtype=np.float32) -> dict:
    """All learnable arrays under stable names, shapes fixed by the graph."""
    d = cfg.hidden_dim
    tar = g.target_type
    if tar not in g.features:
        raise ValueError(f"target type '{tar}' has no feature matrix")
    d_in = g.features[tar].shape[1]

    params = {}

    def put(name, arr, requires_grad=True):
        params[name] = Tensor(arr, requires_grad=requires_grad)

    put(f"proj/{tar}/W", _xavier(rng, d_in, d, dtype))
    put("mask_token", _normal(rng, 1, d_in, dtype))
    for o in g.node_types:
        if o == tar or o not in g.features:
            continue
        d_o = g.features[o].shape[1]
        put(f"mlp/{o}/W1", _xavier(rng, d_o, d, dtype))
        put(f"mlp/{o}/b1", np.zeros((1, d), dtype=dtype))
        put(f"mlp/{o}/W2", _xavier(rng, d, d, dtype))
        put(f"mlp/{o}/b2", np.zeros((1, d), dtype=dtype))
        put(f"mlp/{o}/s1", np.full((1, 1), 0.25, dtype=dtype))
        put(f"mlp/{o}/s2", np.full((1, 1), 0.25, dtype=dtype))
    for spec in g.metapaths:
        for layer in range(cfg.encoder_layers):
            put(f"enc/{spec.name}/{layer}/a", _normal(rng, 2 * d, 1, dtype))
        for hop in range(len(propagation_hops(g, spec))):
            put(f"prop/{spec.name}/{hop}/a", _normal(rng, 2 * d, 1, dtype))
    put("sem/W", _xavier(rng, d, cfg.semantic_dim, dtype))
    put("sem/b", np.zeros((1, cfg.semantic_dim), dtype=dtype))
    put("sem/q", _normal(rng, cfg.semantic_dim, 1, dtype))
    put("dec/a", _normal(rng, 2 * d, 1, dtype))
    put("dec/W", _xavier(rng, d, d_in, dtype))
    put("dec/b", np.zeros((1, d_in), dtype=dtype))
    return params


def params_dtype(params: dict):
    return next(iter(params.values())).dtype


def _const(arr, params) -> Tensor:
    return Tensor(np.asarray(arr, dtype=params_dtype(params)))


# ---------------------------------------------------------------------------
# building blocks


def masked_feature_tensor(tape, X_tar: np.ndarray, plan: MaskPlan | None, params: dict) -> Tensor:
    """Apply a plan's node/attribute masks to the target features, on tape.

    Fully masked rows become the learnable mask token (so gradients reach
    it); attribute-masked entries are zeroed.
    """
    n, d_in = X_tar.shape
    keep = np.ones((n, d_in))
    indicator = np.zeros((n, 1))
    if plan is not None:
        if plan.node_indices:
            rows = list(plan.node_indices)
            keep[rows] = 0.0
            indicator[rows] = 1.0
        if plan.attr_pairs:
            rows, cols = zip(*plan.attr_pairs)
            keep[list(rows), list(cols)] = 0.0
    x = dc.mul(tape, _const(X_tar, params), _const(keep, params))
    token_rows = dc.matmul(tape, _const(indicator, params), params["mask_token"])
    return dc.add(tape, x, token_rows)


def project_nontarget(tape, X_o, params: dict, type_name: str) -> Tensor:
    """Two-layer perceptron mapping non-target features to the hidden dim."""
    w1 = params.get(f"mlp/{type_name}/W1")
    if w1 is None:
        raise KeyError(f"no projection parameters for type '{type_name}' (missing features?)")
    x = X_o if isinstance(X_o, Tensor) else _const(X_o, params)
    h = dc.matmul(tape, x, w1)
    h = dc.add(tape, h, params[f"mlp/{type_name}/b1"])
    h = dc.prelu(tape, h, params[f"mlp/{type_name}/s1"])
    h = dc.matmul(tape, h, params[f"mlp/{type_name}/W2"])
    h = dc.add(tape, h, params[f"mlp/{type_name}/b2"])
    return dc.prelu(tape, h, params[f"mlp/{type_name}/s2"])


def node_attention_score(tape, h_dst: Tensor, h_src: Tensor, a: Tensor, slope: float = 0.2) -> Tensor:
    """Per-row scores leaky_relu(a . [h_i || h_j]) for already-gathered pairs."""
    cat = dc.concat_cols(tape, h_dst, h_src)
    return dc.leaky_relu(tape, dc.matmul(tape, cat, a), slope=slope)


def normalize_attention(tape, scores: Tensor, dst_ids: np.ndarray, n_nodes: int) -> Tensor:
    """Softmax of edge scores within each destination's neighborhood."""
    return dc.segment_softmax(tape, scores, dst_ids, n_nodes)


def aggregate(tape, alpha: Tensor, h_src: Tensor, dst_ids: np.ndarray, n_nodes: int) -> Tensor:
    """z_i = elu(sum_j alpha_ij h_j); destinations with no edges get zero rows."""
    msg = dc.mul(tape, alpha, h_src)
    return dc.elu(tape, dc.scatter_add_rows(tape, msg, dst_ids, n_nodes))


def attention_layer(
    tape,
    H_dst: Tensor,
    H_src: Tensor,
    edges: np.ndarray,
    a: Tensor,
    n_dst: int,
    params: dict,
    slope: float = 0.2,
    fallback: str = "self",
):
    """One attention hop from src rows to dst rows over an edge list.

    fallback "self" keeps H_dst rows for destinations with no incoming edge;
    "zero" leaves them at zero (used before a residual add). Returns the new
    dst embeddings and the attention coefficients as a numpy array.
    """
    src_ids, dst_ids = edges[:, 0], edges[:, 1]
    hs = dc.gather_rows(tape, H_src, src_ids)
    hd = dc.gather_rows(tape, H_dst, dst_ids)
    scores = node_attention_score(tape, hd, hs, a, slope=slope)
    alpha = normalize_attention(tape, scores, dst_ids, n_dst)
    z = aggregate(tape, alpha, hs, dst_ids, n_dst)
    if fallback == "self":
        has_in = np.zeros((n_dst, 1))
        has_in[np.unique(dst_ids)] = 1.0
        mask = _const(has_in, params)
        inv = _const(1.0 - has_in, params)
        z = dc.add(tape, dc.mul(tape, z, mask), dc.mul(tape, H_dst, inv))
    return z, alpha.data[:, 0].copy()


# ---------------------------------------------------------------------------
# encoder


def semantic_attention(tape, embeds: list, params: dict):
    """HAN-style fusion: per-path score mean_i q.tanh(W h_i + b), softmaxed."""
    scores = None
    for h in embeds:
        t = dc.tanh(tape, dc.add(tape, dc.matmul(tape, h, params["sem/W"]), params["sem/b"]))
        w = dc.reduce_mean(tape, dc.matmul(tape, t, params["sem/q"]))
        scores = w if scores is None else dc.concat_rows(tape, scores, w)
    alpha = dc.segment_softmax(tape, scores, np.zeros(len(embeds), dtype=np.int64), 1)
    fused = None
    for i, h in enumerate(embeds):
        term = dc.mul(tape, dc.gather_rows(tape, alpha, [i]), h)
        fused = term if fused is None else dc.add(tape, fused, term)
    return fused, alpha


def encode(tape, masked_graphs: dict, X_masked: Tensor, params: dict, cfg: TrainConfig,
           full_graphs: dict | None = None) -> EncodedState:
    """Per-path stacked attention over masked adjacency, then semantic fusion.

    When full_graphs is given, also scores the first attention layer over the
    complete edge set (no gradients) so the next epoch's attention-based
    masking has coefficients for every edge.
    """
    tar_w = next(v for k, v in params.items() if k.startswith("proj/"))
    h0 = dc.matmul(tape, X_masked, tar_w)
    names = sorted(masked_graphs)
    per_path = {}
    edge_attention = {}
    for name in names:
        mpg = masked_graphs[name]
        h = h0
        att = np.zeros(0)
        for layer in range(cfg.encoder_layers):
            h, att = attention_layer(
                tape, h, h, mpg.edges, params[f"enc/{name}/{layer}/a"], mpg.n_nodes,
                params, slope=cfg.attn_slope, fallback="self",
            )
        per_path[name] = h
        edge_attention[name] = att
    fused, alpha = semantic_attention(tape, [per_path[n] for n in names], params)

    full_edge_attention = {}
    if full_graphs is not None:
        for name in names:
            mpg = full_graphs[name]
            _, att = attention_layer(
                None, h0, h0, mpg.edges, params[f"enc/{name}/0/a"], mpg.n_nodes,
                params, slope=cfg.attn_slope, fallback="zero",
            )
            full_edge_attention[name] = att

    return EncodedState(
        per_path=per_path,
        fused=fused,
        edge_attention=edge_attention,
        full_edge_attention=full_edge_attention,
        alpha=alpha.data[:, 0].copy(),
        alpha_tensor=alpha,
    )


# ---------------------------------------------------------------------------
# intra-meta-path propagation


def propagation_hops(g: HeteroGraph, spec: MetaPathSpec) -> list:
    """Steps of the midpoint-outward walk toward the target end of a path."""
    length = len(spec.relations)
    return list(spec.relations[length // 2 :])


def propagate_metapath(
    tape,
    g: HeteroGraph,
    spec: MetaPathSpec,
    H_tar: Tensor,
    H_by_type: dict,
    params: dict,
    cfg: TrainConfig,
) -> Tensor:
    """Z from walking one meta-path midpoint-to-target; zero rows where the
    target has no upstream neighbors (caller applies the residual)."""
    current = dict(H_by_type)
    current[g.target_type] = H_tar
    hops = propagation_hops(g, spec)
    z_last = None
    for hop_idx, step in enumerate(hops):
        sub = g.resolve_step(step)
        n_dst = g.node_counts[sub.dst_type]
        h_src = current.get(sub.src_type)
        if h_src is None:
            # featureless intermediate type: nothing to propagate
            h_src = _const(np.zeros((g.node_counts[sub.src_type], cfg.hidden_dim)), params)
            current[sub.src_type] = h_src
        h_dst = current.get(sub.dst_type)
        if h_dst is None:
            h_dst = _const(np.zeros((n_dst, cfg.hidden_dim)), params)
        a = params[f"prop/{spec.name}/{hop_idx}/a"]
        last = hop_idx == len(hops) - 1
        z, _ = attention_layer(
            tape, h_dst, h_src, sub.edges, a, n_dst, params,
            slope=cfg.attn_slope, fallback="zero" if last else "self",
        )
        if last:
            z_last = z
        else:
            current[sub.dst_type] = z
    return z_last


def enhance(tape, g: HeteroGraph, encoded: EncodedState, params: dict, cfg: TrainConfig) -> Tensor:
    """Fused embeddings plus semantic-weighted propagation from each path."""
    if not cfg.enhancement:
        return encoded.fused
    H_by_type = {
        o: project_nontarget(tape, g.features[o], params, o)
        for o in g.node_types
        if o != g.target_type and o in g.features
    }
    names = sorted(n.name for n in g.metapaths)
    combined = None
    for i, name in enumerate(names):
        spec = next(s for s in g.metapaths if s.name == name)
        z = propagate_metapath(tape, g, spec, encoded.fused, H_by_type, params, cfg)
        term = dc.mul(tape, dc.gather_rows(tape, encoded.alpha_tensor, [i]), z)
        combined = term if combined is None else dc.add(tape, combined, term)
    if cfg.residual:
        return dc.add(tape, encoded.fused, combined)
    return combined


# ---------------------------------------------------------------------------
# decoder


def union_masked_edges(masked_graphs: dict) -> np.ndarray:
    """Distinct remaining edges across paths, destination-major order."""
    if not masked_graphs:
        return np.empty((0, 2), dtype=np.int64)
    stacked = np.concatenate([m.edges for m in masked_graphs.values()], axis=0)
    if stacked.shape[0] == 0:
        return stacked
    uniq = np.unique(stacked, axis=0)
    order = np.lexsort((uniq[:, 0], uniq[:, 1]))
    return uniq[order]


def decode(tape, H_enh: Tensor, masked_graphs: dict, params: dict, cfg: TrainConfig) -> Tensor:
    """One attention layer over the union of masked edges, then a linear map
    back to the input feature dimension."""
    edges = union_masked_edges(masked_graphs)
    n = H_enh.shape[0]
    h, _ = attention_layer(
        tape, H_enh, H_enh, edges, params["dec/a"], n, params,
        slope=cfg.attn_slope, fallback="self",
    )
    return dc.add(tape, dc.matmul(tape, h, params["dec/W"]), params["dec/b"])


# ---------------------------------------------------------------------------
# full forward


def forward(
    tape,
    g: HeteroGraph,
    graphs: dict,
    masked_graphs: dict,
    plan: MaskPlan | None,
    params: dict,
    cfg: TrainConfig,
    with_full_attention: bool = False,
) -> ForwardResult:
    X_tar = g.features[g.target_type]
    x_masked = masked_feature_tensor(tape, X_tar, plan, params)
    encoded = encode(
        tape, masked_graphs, x_masked, params, cfg,
        full_graphs=graphs if with_full_attention else None,
    )
    enhanced = enhance(tape, g, encoded, params, cfg)
    decoded = decode(tape, enhanced, masked_graphs, params, cfg)
    return ForwardResult(encoded=encoded, enhanced=enhanced, decoded=decoded)


def embed_forward(g: HeteroGraph, graphs: dict, params: dict, cfg: TrainConfig) -> np.ndarray:
    """Inference pass with no masking; returns the fused, enhanced embeddings."""
    result = forward(None, g, graphs, graphs, None, params, cfg)
    return result.enhanced.data.copy()
