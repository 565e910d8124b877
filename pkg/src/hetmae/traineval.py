"""Training loop, checkpointing, embedding inference, and evaluation.

Evaluation follows the frozen-embedding protocol: stratified splits at 20/40/60
percent training fractions, a multinomial logistic-regression probe trained by
gradient descent with L2 regularization (selected on validation micro-F1),
and micro-F1 / macro-F1 / one-vs-rest AUC on the test split.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import loss as loss_mod
from . import masking, model
from .config import TrainConfig
from .diffcore import AdamState, NonFiniteError, Tape, Tensor
from .hetgraph import HeteroGraph, build_all_metapath_graphs


class TrainDivergedError(RuntimeError):
    def __init__(self, epoch: int, component: str):
        super().__init__(f"non-finite loss at epoch {epoch} ({component})")
        self.epoch = epoch
        self.component = component


@dataclass
class TrainResult:
    params: dict
    graphs: dict
    log: list
    config: TrainConfig


@dataclass
class Metrics:
    split: int
    micro_f1: float
    macro_f1: float
    auc: float
    micro_f1_std: float = 0.0
    macro_f1_std: float = 0.0
    auc_std: float = 0.0


# ---------------------------------------------------------------------------
# training


def train(g: HeteroGraph, cfg: TrainConfig, out_dir=None, progress=None) -> TrainResult:
    """Mask -> encode -> propagate -> decode -> losses -> adam, per epoch.

    Fully deterministic for a fixed config. With out_dir set, writes
    checkpoint/params.bin and train_log.jsonl there.
    """
    cfg.validate()
    graphs = build_all_metapath_graphs(g, self_loops=cfg.self_loops)
    rng = np.random.default_rng(cfg.seed)
    params = model.init_params(g, cfg, rng)
    state = AdamState.init(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    tar = g.target_type
    n_tar, d_in = g.features[tar].shape
    attention = None
    log = []
    for epoch in range(cfg.epochs):
        plan = masking.plan_edge_masks(
            graphs, cfg.mask_strategy, cfg.mask_rate, rng,
            attention=attention, C=cfg.inverse_softmax_c, seed=cfg.seed,
        )
        plan.node_indices, plan.attr_pairs = masking.plan_feature_mask(
            n_tar, d_in, cfg.node_mask_rate, cfg.attr_mask_rate, rng
        )
        plan.attr_mask_rate = cfg.attr_mask_rate
        masked = masking.apply_mask_all(graphs, plan)
        tape = Tape()
        try:
            result = model.forward(
                tape, g, graphs, masked, plan, params, cfg,
                with_full_attention=cfg.mask_strategy == "attention",
            )
            l_tot, report = loss_mod.full_objective(tape, g, graphs, result, plan, cfg)
        except NonFiniteError as exc:
            raise TrainDivergedError(epoch, str(exc)) from exc
        if not np.isfinite(report.l_total):
            raise TrainDivergedError(epoch, "total loss")
        for p in params.values():
            p.zero_grad()
        dc.backward(tape, l_tot)
        grads = {
            name: p.grad if p.grad is not None else np.zeros_like(p.data)
            for name, p in params.items()
        }
        dc.adam_step(params, grads, state)
        if cfg.mask_strategy == "attention":
            attention = result.encoded.full_edge_attention
        log.append({"epoch": epoch, **report.as_record()})
        if progress and (epoch % 50 == 0 or epoch == cfg.epochs - 1):
            print(f"epoch {epoch}: L_total={report.l_total:.6f}", file=progress)

    if out_dir is not None:
        out = Path(out_dir)
        (out / "checkpoint").mkdir(parents=True, exist_ok=True)
        dc.save_params(out / "checkpoint" / "params.bin", params)
        write_train_log(out / "train_log.jsonl", log)
        (out / "config.json").write_text(cfg.to_json())
    return TrainResult(params=params, graphs=graphs, log=log, config=cfg)


def write_train_log(path, log):
    with open(path, "w") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_checkpoint(run_dir):
    """(params, config) from a training output directory."""
    run = Path(run_dir)
    params_path = run / "checkpoint" / "params.bin"
    cfg_path = run / "config.json"
    if not params_path.exists():
        raise FileNotFoundError(f"{params_path}: no checkpoint found")
    if not cfg_path.exists():
        raise FileNotFoundError(f"{cfg_path}: no config snapshot next to checkpoint")
    arrays = dc.load_params(params_path)
    cfg = TrainConfig.from_json(cfg_path.read_text())
    params = {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
    return params, cfg


def embed(g: HeteroGraph, params: dict, cfg: TrainConfig) -> np.ndarray:
    """Deterministic no-mask forward pass; fused+enhanced target embeddings."""
    tar_key = f"proj/{g.target_type}/W"
    if tar_key not in params:
        raise ValueError(f"checkpoint has no '{tar_key}'; wrong dataset for this checkpoint?")
    w = params[tar_key]
    d_in = g.features[g.target_type].shape[1]
    if w.shape != (d_in, cfg.hidden_dim):
        raise ValueError(
            f"checkpoint/config mismatch: projection is {w.shape}, expected "
            f"({d_in}, {cfg.hidden_dim})"
        )
    graphs = build_all_metapath_graphs(g, self_loops=cfg.self_loops)
    return model.embed_forward(g, graphs, params, cfg)


def write_embeddings_tsv(path, emb: np.ndarray, ids=None):
    with open(path, "w") as fh:
        for i, row in enumerate(emb):
            node = ids[i] if ids is not None else str(i)
            fh.write(node + "\t" + "\t".join(f"{v:.8g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# splits


def make_splits(labels: np.ndarray, train_fraction: float, seed: int):
    """Per-class stratified (train, val, test) index arrays.

    floor(fraction * n_class) training nodes per class; the remainder is
    split evenly between validation and test (validation gets the odd one).
    Unlabeled nodes (-1) are excluded everywhere.
    """
    if not any(abs(train_fraction - f) < 1e-12 for f in (0.2, 0.4, 0.6)):
        raise ValueError(f"train fraction must be one of 0.2/0.4/0.6, got {train_fraction}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for cls in np.unique(labels[labels >= 0]):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 3:
            raise ValueError(f"class {cls} has only {idx.size} nodes; need at least 3")
        idx = rng.permutation(idx)
        n_tr = int(train_fraction * idx.size)
        rest = idx.size - n_tr
        n_val = (rest + 1) // 2
        train.append(idx[:n_tr])
        val.append(idx[n_tr : n_tr + n_val])
        test.append(idx[n_tr + n_val :])
    return (
        np.sort(np.concatenate(train)),
        np.sort(np.concatenate(val)),
        np.sort(np.concatenate(test)),
    )


# ---------------------------------------------------------------------------
# metrics


def _confusion_counts(y_true, y_pred, cls):
    tp = int(np.sum((y_true == cls) & (y_pred == cls)))
    fp = int(np.sum((y_true != cls) & (y_pred == cls)))
    fn = int(np.sum((y_true == cls) & (y_pred != cls)))
    return tp, fp, fn


def micro_f1(y_true, y_pred) -> float:
    """F1 from pooled true/false positives and negatives over all classes."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0 or y_true.shape != y_pred.shape:
        raise ValueError("micro_f1 needs equal-length nonempty label arrays")
    classes = np.unique(np.concatenate([y_true, y_pred]))
    tp = fp = fn = 0
    for cls in classes:
        t, p, n = _confusion_counts(y_true, y_pred, cls)
        tp, fp, fn = tp + t, fp + p, fn + n
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def macro_f1(y_true, y_pred) -> float:
    """Unweighted mean of per-class F1; classes absent from y_true score 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0 or y_true.shape != y_pred.shape:
        raise ValueError("macro_f1 needs equal-length nonempty label arrays")
    classes = np.unique(np.concatenate([y_true, y_pred]))
    scores = []
    for cls in classes:
        tp, fp, fn = _confusion_counts(y_true, y_pred, cls)
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=np.float64)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _binary_auc(scores: np.ndarray, pos_mask: np.ndarray) -> float:
    n_pos = int(pos_mask.sum())
    n_neg = pos_mask.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = _midranks(np.asarray(scores, dtype=np.float64))
    return float((ranks[pos_mask].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_ovr(y_true, scores) -> float:
    """One-vs-rest AUC by pairwise concordance (ties 0.5), macro-averaged.

    1-D scores are treated as positive-class scores of a binary problem;
    (N, K) scores give one column per class.
    """
    y_true = np.asarray(y_true)
    scores = np.asarray(scores, dtype=np.float64)
    if y_true.size == 0:
        raise ValueError("auc needs nonempty labels")
    if scores.ndim == 1:
        return _binary_auc(scores, y_true == 1)
    per_class = []
    for cls in range(scores.shape[1]):
        pos = y_true == cls
        if not pos.any():
            raise ValueError(f"class {cls} absent from y_true")
        per_class.append(_binary_auc(scores[:, cls], pos))
    return float(np.mean(per_class))


# ---------------------------------------------------------------------------
# linear probe


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def linear_probe(
    embeddings: np.ndarray,
    labels: np.ndarray,
    splits,
    lr: float = 0.01,
    l2: float = 1e-4,
    steps: int = 300,
    n_probe_seeds: int = 10,
    base_seed: int = 0,
) -> Metrics:
    """Multinomial logistic regression on frozen embeddings.

    Trained by full-batch gradient descent; the step with the best
    validation micro-F1 is evaluated on the test split. Metrics are
    mean +- std over probe seeds (random initializations).
    """
    train_idx, val_idx, test_idx = splits
    labels = np.asarray(labels)
    if np.unique(labels[train_idx]).size < 2:
        raise ValueError("degenerate probe split: training labels are single-class")
    n_classes = int(labels[labels >= 0].max()) + 1
    X = np.concatenate([embeddings, np.ones((embeddings.shape[0], 1))], axis=1)
    onehot = np.zeros((train_idx.size, n_classes))
    onehot[np.arange(train_idx.size), labels[train_idx]] = 1.0

    per_seed = []
    for s in range(n_probe_seeds):
        rng = np.random.default_rng((base_seed, s))
        W = rng.normal(scale=0.01, size=(X.shape[1], n_classes))
        best = (-1.0, None)
        Xtr = X[train_idx]
        for _ in range(steps):
            probs = _softmax(Xtr @ W)
            grad = Xtr.T @ (probs - onehot) / train_idx.size + 2 * l2 * W
            W -= lr * grad
            val_pred = np.argmax(X[val_idx] @ W, axis=1)
            score = micro_f1(labels[val_idx], val_pred)
            if score > best[0]:
                best = (score, W.copy())
        W = best[1]
        test_scores = _softmax(X[test_idx] @ W)
        test_pred = np.argmax(test_scores, axis=1)
        per_seed.append(
            (
                micro_f1(labels[test_idx], test_pred),
                macro_f1(labels[test_idx], test_pred),
                auc_ovr(labels[test_idx], test_scores),
            )
        )
    arr = np.asarray(per_seed)
    return Metrics(
        split=0,
        micro_f1=float(arr[:, 0].mean()),
        macro_f1=float(arr[:, 1].mean()),
        auc=float(arr[:, 2].mean()),
        micro_f1_std=float(arr[:, 0].std()),
        macro_f1_std=float(arr[:, 1].std()),
        auc_std=float(arr[:, 2].std()),
    )


def probe_splits(emb: np.ndarray, labels: np.ndarray, splits, cfg: TrainConfig) -> list:
    """One Metrics entry per requested split percentage."""
    out = []
    for pct in splits:
        idx = make_splits(labels, pct / 100.0, seed=cfg.seed)
        m = linear_probe(
            emb, labels, idx,
            lr=cfg.probe_lr, l2=cfg.probe_l2, steps=cfg.probe_steps,
            n_probe_seeds=cfg.probe_seeds, base_seed=cfg.seed,
        )
        m.split = pct
        out.append(m)
    return out


# ---------------------------------------------------------------------------
# ablation

ABLATION_VARIANTS = (
    "full",
    "feat_only",
    "mp_only",
    "no_enhancement",
    "mask_none",
    "mask_random",
    "mask_degree",
    "mask_attention",
)


def variant_config(cfg: TrainConfig, variant: str) -> TrainConfig:
    if variant == "full":
        return cfg
    if variant == "feat_only":
        return cfg.replace(lambda_mp=0.0)
    if variant == "mp_only":
        return cfg.replace(lambda_feat=0.0)
    if variant == "no_enhancement":
        return cfg.replace(enhancement=False)
    if variant.startswith("mask_"):
        strategy = variant[len("mask_") :]
        return cfg.replace(mask_strategy=strategy)
    raise ValueError(f"unknown ablation variant '{variant}'")


def _ablation_cell(args):
    g, cfg, variant, seed = args
    vcfg = variant_config(cfg, variant).replace(seed=seed)
    result = train(g, vcfg)
    emb = model.embed_forward(g, result.graphs, result.params, vcfg)
    rows = []
    for m in probe_splits(emb, g.labels, vcfg.eval_splits, vcfg):
        rows.append((variant, m.split, seed, m.micro_f1, m.macro_f1, m.auc))
    return rows


def run_ablation(g: HeteroGraph, cfg: TrainConfig, variants, n_seeds: int = 5, jobs: int = 1, progress=None):
    """Metrics per variant, mean +- std over n_seeds training seeds."""
    for v in variants:
        if v not in ABLATION_VARIANTS:
            raise ValueError(f"unknown ablation variant '{v}'")
    if g.labels is None:
        raise ValueError("ablation needs labels on the target type")
    cells = [(g, cfg, v, cfg.seed + i) for v in variants for i in range(n_seeds)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_ablation_cell, cells))
    else:
        results = []
        for cell in cells:
            results.append(_ablation_cell(cell))
            if progress:
                print(f"ablation cell done: {cell[2]} seed {cell[3]}", file=progress)
    flat = [row for rows in results for row in rows]

    table = []
    for variant in variants:
        for pct in cfg.eval_splits:
            rows = [r for r in flat if r[0] == variant and r[1] == pct]
            for mi, name in ((3, "micro_f1"), (4, "macro_f1"), (5, "auc")):
                vals = np.asarray([r[mi] for r in rows])
                table.append(
                    {
                        "variant": variant,
                        "split": pct,
                        "metric": name,
                        "mean": float(vals.mean()),
                        "std": float(vals.std()),
                    }
                )
    return table


def write_metrics_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("variant,split,metric,mean,std\n")
        for r in rows:
            fh.write(f"{r['variant']},{r['split']},{r['metric']},{r['mean']:.6f},{r['std']:.6f}\n")


def majority_baseline(labels: np.ndarray, test_idx) -> float:
    """Micro-F1 of always predicting the most common training-set class."""
    labels = np.asarray(labels)
    counts = np.bincount(labels[labels >= 0])
    majority = int(np.argmax(counts))
    y = labels[test_idx]
    return micro_f1(y, np.full_like(y, majority))
