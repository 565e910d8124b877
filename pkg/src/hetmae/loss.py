"""Scaled-cosine reconstruction losses and their semantic-weighted sum.

Feature loss: mean over in-scope target nodes of (1 - cos(X_v, H_v))^gamma1.
Meta-path loss: adjacency is reconstructed as sigmoid(H H^T) and compared
row-wise against the unmasked binary adjacency with the same scaled-cosine
form. Rows where either side has zero norm are undefined under the cosine;
by default they contribute nothing and are excluded from the average
(strict=True raises instead).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor


@dataclass
class LossReport:
    l_feat: float
    l_per_path: dict  # path name -> float
    l_mp: float
    l_total: float
    alpha: dict  # path name -> semantic weight

    def as_record(self) -> dict:
        return {
            "L_feat": self.l_feat,
            "L_path": dict(sorted(self.l_per_path.items())),
            "L_mp": self.l_mp,
            "L_total": self.l_total,
            "alpha": dict(sorted(self.alpha.items())),
        }


def _nonzero_rows(arr: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.linalg.norm(arr, axis=1) > 0)


def _scaled_cosine_mean(tape, a: Tensor, b: Tensor, gamma: float) -> Tensor:
    cos = dc.row_cosine(tape, a, b)
    one = Tensor(np.ones((cos.shape[0], 1), dtype=cos.dtype))
    err = dc.add(tape, one, dc.scale(tape, cos, -1.0))
    return dc.reduce_mean(tape, dc.power(tape, err, gamma))


def feature_loss(
    tape,
    X_tar: np.ndarray,
    H_D: Tensor,
    gamma1: float,
    scope: str = "all",
    scope_indices=None,
    strict: bool = False,
) -> Tensor:
    """Scaled-cosine error between original and reconstructed target features.

    scope "all" averages over every target node; "masked_only" over
    scope_indices (the plan's fully masked nodes).
    """
    X_tar = np.asarray(X_tar)
    if scope == "all":
        rows = np.arange(X_tar.shape[0])
    elif scope == "masked_only":
        rows = np.asarray(sorted(scope_indices or ()), dtype=np.int64)
    else:
        raise ValueError(f"unknown scope '{scope}'")
    if rows.size == 0:
        raise ValueError("feature loss scope is empty")

    x_rows = X_tar[rows]
    keep = _nonzero_rows(x_rows)
    h_rows = H_D.data[rows]
    keep = keep[np.linalg.norm(h_rows[keep], axis=1) > 0]
    if keep.size < rows.size:
        if strict:
            raise ValueError("zero-norm row in feature loss scope (strict mode)")
        if keep.size == 0:
            return dc.scale(tape, dc.reduce_mean(tape, H_D), 0.0)
    rows = rows[keep]
    x = Tensor(np.asarray(X_tar[rows], dtype=H_D.dtype))
    h = dc.gather_rows(tape, H_D, rows)
    return _scaled_cosine_mean(tape, x, h, gamma1)


def reconstruct_adjacency(tape, H_D: Tensor) -> Tensor:
    """Pairwise reconstruction sigmoid(H H^T) as an (N, N) tensor."""
    return dc.sigmoid(tape, dc.matmul(tape, H_D, dc.transpose(tape, H_D)))


def metapath_loss(tape, A: np.ndarray, A_rec: Tensor, gamma2: float, strict: bool = False) -> Tensor:
    """Row-wise scaled-cosine error between binary adjacency and reconstruction."""
    A = np.asarray(A, dtype=A_rec.dtype)
    if A.shape != A_rec.shape:
        raise ValueError(f"adjacency shapes differ: {A.shape} vs {A_rec.shape}")
    keep = _nonzero_rows(A)
    keep = keep[np.linalg.norm(A_rec.data[keep], axis=1) > 0]
    if keep.size < A.shape[0]:
        if strict:
            raise ValueError("zero adjacency row (strict mode)")
        if keep.size == 0:
            return dc.scale(tape, dc.reduce_mean(tape, A_rec), 0.0)
    a = Tensor(A[keep])
    rec = dc.gather_rows(tape, A_rec, keep)
    return _scaled_cosine_mean(tape, a, rec, gamma2)


def combined_mp_loss(tape, per_path_losses: list, alpha_tensor: Tensor) -> Tensor:
    """Semantic-weighted sum of per-path losses, weights from the encoder."""
    if len(per_path_losses) != alpha_tensor.shape[0]:
        raise ValueError(
            f"{len(per_path_losses)} path losses but {alpha_tensor.shape[0]} semantic weights"
        )
    total = None
    for i, l in enumerate(per_path_losses):
        term = dc.mul(tape, dc.gather_rows(tape, alpha_tensor, [i]), l)
        total = term if total is None else dc.add(tape, total, term)
    return total


def total_loss(tape, l_feat: Tensor, l_mp: Tensor, lambda_feat: float, lambda_mp: float) -> Tensor:
    if lambda_feat < 0 or lambda_mp < 0:
        raise ValueError("loss weights must be nonnegative")
    return dc.add(tape, dc.scale(tape, l_feat, lambda_feat), dc.scale(tape, l_mp, lambda_mp))


def full_objective(tape, g, graphs, result, plan, cfg):
    """L_total over a forward result; returns (tensor, LossReport)."""
    l_feat = feature_loss(
        tape,
        g.features[g.target_type],
        result.decoded,
        cfg.gamma1,
        scope=cfg.loss_scope,
        scope_indices=None if plan is None else plan.node_indices,
    )
    a_rec = reconstruct_adjacency(tape, result.decoded)
    names = sorted(graphs)
    per_path = [metapath_loss(tape, graphs[n].adjacency, a_rec, cfg.gamma2) for n in names]
    l_mp = combined_mp_loss(tape, per_path, result.encoded.alpha_tensor)
    l_tot = total_loss(tape, l_feat, l_mp, cfg.lambda_feat, cfg.lambda_mp)
    report = LossReport(
        l_feat=l_feat.item(),
        l_per_path={n: l.item() for n, l in zip(names, per_path)},
        l_mp=l_mp.item(),
        l_total=l_tot.item(),
        alpha={n: float(a) for n, a in zip(names, result.encoded.alpha)},
    )
    return l_tot, report
