"""Dense 2-D tensors with a recorded tape and reverse-mode gradients.

Execution is eager: every op computes its numpy result immediately and, when a
Tape is supplied, pushes a backward closure onto it. `backward` replays the
tape once in reverse order, accumulating into `.grad` of every tensor that
requires it. All tensors are (rows, cols); scalars are (1, 1).

Passing `tape=None` to any op runs the forward computation without recording
(inference mode).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float32

PARAMS_MAGIC = b"HGP1"


class NonFiniteError(FloatingPointError):
    """A forward op produced NaN or Inf; message names the producing op."""


class Tensor:
    """A dense (rows, cols) array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


class _Node:
    __slots__ = ("op", "out", "backward")

    def __init__(self, op, out, backward):
        self.op = op
        self.out = out
        self.backward = backward


class Tape:
    """Ordered record of executed ops; consumed by a single backward pass."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False

    def __len__(self):
        return len(self._nodes)

    def _record(self, op: str, out: Tensor, backward_fn):
        self._nodes.append(_Node(op, out, backward_fn))


def _check_finite(op: str, arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"op '{op}' produced a non-finite value")


def _emit(tape: Tape | None, op: str, out_data: np.ndarray, backward_fn) -> Tensor:
    _check_finite(op, out_data)
    out = Tensor(out_data)
    if tape is not None:
        tape._record(op, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original 2-D shape."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and out.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


# ---------------------------------------------------------------------------
# forward ops


def matmul(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out_data = a.data @ b.data

    def bw(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    return _emit(tape, "matmul", out_data, bw)


def transpose(tape, x: Tensor) -> Tensor:
    out_data = x.data.T.copy()

    def bw(g):
        return [(x, g.T)]

    return _emit(tape, "transpose", out_data, bw)


def add(tape, a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bw(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))]

    return _emit(tape, "add", out_data, bw)


def mul(tape, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting over the two axes."""
    out_data = a.data * b.data

    def bw(g):
        return [
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        ]

    return _emit(tape, "mul", out_data, bw)


def concat_cols(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"concat_cols row mismatch: {a.shape} vs {b.shape}")
    out_data = np.concatenate([a.data, b.data], axis=1)
    ka = a.shape[1]

    def bw(g):
        return [(a, g[:, :ka]), (b, g[:, ka:])]

    return _emit(tape, "concat_cols", out_data, bw)


def concat_rows(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"concat_rows col mismatch: {a.shape} vs {b.shape}")
    out_data = np.concatenate([a.data, b.data], axis=0)
    na = a.shape[0]

    def bw(g):
        return [(a, g[:na]), (b, g[na:])]

    return _emit(tape, "concat_rows", out_data, bw)


def leaky_relu(tape, x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data >= 0
    out_data = np.where(mask, x.data, slope * x.data)

    def bw(g):
        return [(x, g * np.where(mask, 1.0, slope).astype(x.dtype))]

    return _emit(tape, "leaky_relu", out_data, bw)


def elu(tape, x: Tensor) -> Tensor:
    mask = x.data > 0
    out_data = np.where(mask, x.data, np.expm1(np.minimum(x.data, 0.0)))

    def bw(g):
        # d/dx elu = 1 for x>0, exp(x) = elu(x)+1 otherwise
        return [(x, g * np.where(mask, 1.0, out_data + 1.0).astype(x.dtype))]

    return _emit(tape, "elu", out_data, bw)


def prelu(tape, x: Tensor, slope: Tensor) -> Tensor:
    """Parametric relu with a learnable scalar slope tensor of shape (1, 1)."""
    if slope.shape != (1, 1):
        raise ValueError(f"prelu slope must be (1, 1), got {slope.shape}")
    s = slope.data[0, 0]
    mask = x.data >= 0
    out_data = np.where(mask, x.data, s * x.data)

    def bw(g):
        dx = g * np.where(mask, 1.0, s).astype(x.dtype)
        ds = np.array([[np.sum(g * np.where(mask, 0.0, x.data))]], dtype=x.dtype)
        return [(x, dx), (slope, ds)]

    return _emit(tape, "prelu", out_data, bw)


def tanh(tape, x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def bw(g):
        return [(x, g * (1.0 - out_data * out_data))]

    return _emit(tape, "tanh", out_data, bw)


def sigmoid(tape, x: Tensor) -> Tensor:
    # split by sign to avoid exp overflow
    pos = x.data >= 0
    e = np.exp(np.where(pos, -x.data, x.data))
    out_data = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))

    def bw(g):
        return [(x, g * out_data * (1.0 - out_data))]

    return _emit(tape, "sigmoid", out_data, bw)


def exp(tape, x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out_data = np.exp(x.data)

    def bw(g):
        return [(x, g * out_data)]

    return _emit(tape, "exp", out_data, bw)


def log(tape, x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(x.data)

    def bw(g):
        return [(x, g / x.data)]

    return _emit(tape, "log", out_data, bw)


def reduce_mean(tape, x: Tensor) -> Tensor:
    n = x.data.size
    out_data = np.array([[x.data.mean()]], dtype=x.dtype)

    def bw(g):
        return [(x, np.full_like(x.data, g[0, 0] / n))]

    return _emit(tape, "reduce_mean", out_data, bw)


def scale(tape, x: Tensor, c: float) -> Tensor:
    out_data = x.data * c

    def bw(g):
        return [(x, g * c)]

    return _emit(tape, "scale", out_data, bw)


def power(tape, x: Tensor, gamma: float) -> Tensor:
    with np.errstate(invalid="ignore"):
        out_data = np.power(x.data, gamma)

    def bw(g):
        return [(x, g * gamma * np.power(x.data, gamma - 1.0))]

    return _emit(tape, "power", out_data, bw)


def row_cosine(tape, a: Tensor, b: Tensor) -> Tensor:
    """Per-row cosine similarity of two (N, d) tensors, as an (N, 1) tensor.

    Raises on zero-norm rows. The forward value is clipped to [-1, 1]; the
    clip only corrects floating-point rounding, so backward treats it as
    identity.
    """
    if a.shape != b.shape:
        raise ValueError(f"row_cosine shape mismatch: {a.shape} vs {b.shape}")
    na2 = np.sum(a.data * a.data, axis=1, keepdims=True)
    nb2 = np.sum(b.data * b.data, axis=1, keepdims=True)
    if np.any(na2 == 0) or np.any(nb2 == 0):
        raise ValueError("row_cosine: zero-norm row")
    dot = np.sum(a.data * b.data, axis=1, keepdims=True)
    # sqrt(na2 * nb2) keeps cos(x, x) == 1 bit-exactly (sqrt(fl(s*s)) == s)
    denom = np.sqrt(na2 * nb2)
    cos = np.clip(dot / denom, -1.0, 1.0)

    def bw(g):
        da = g * (b.data / denom - cos * a.data / na2)
        db = g * (a.data / denom - cos * b.data / nb2)
        return [(a, da), (b, db)]

    return _emit(tape, "row_cosine", cos.astype(a.dtype), bw)


def segment_softmax(tape, scores: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Softmax of (E, 1) scores within groups given by segment_ids (E,).

    Segments need not be contiguous. Each segment's outputs sum to 1.
    """
    if scores.shape[1] != 1:
        raise ValueError(f"segment_softmax expects (E, 1) scores, got {scores.shape}")
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != (scores.shape[0],):
        raise ValueError("segment_ids length must match score rows")
    s = scores.data[:, 0]
    seg_max = np.full(num_segments, -np.inf, dtype=s.dtype)
    np.maximum.at(seg_max, ids, s)
    ex = np.exp(s - seg_max[ids])
    denom = np.bincount(ids, weights=ex, minlength=num_segments)
    out = (ex / denom[ids]).astype(scores.dtype).reshape(-1, 1)

    def bw(g):
        gv = g[:, 0]
        ov = out[:, 0]
        seg_dot = np.bincount(ids, weights=gv * ov, minlength=num_segments)
        ds = ov * (gv - seg_dot[ids])
        return [(scores, ds.astype(scores.dtype).reshape(-1, 1))]

    return _emit(tape, "segment_softmax", out, bw)


def _accumulate_rows(idx: np.ndarray, vals: np.ndarray, n_rows: int) -> np.ndarray:
    """Sum rows of vals into n_rows buckets given by idx (sort + reduceat)."""
    out = np.zeros((n_rows, vals.shape[1]), dtype=vals.dtype)
    if idx.size == 0:
        return out
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    sorted_vals = vals[order]
    starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
    out[sorted_idx[starts]] = np.add.reduceat(sorted_vals, starts, axis=0)
    return out


def gather_rows(tape, x: Tensor, indices: np.ndarray) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    out_data = x.data[idx]

    def bw(g):
        return [(x, _accumulate_rows(idx, g, x.shape[0]))]

    return _emit(tape, "gather_rows", out_data, bw)


def scatter_add_rows(tape, x: Tensor, indices: np.ndarray, num_rows: int) -> Tensor:
    """out[j] = sum of x rows i with indices[i] == j; rows never hit stay 0."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != (x.shape[0],):
        raise ValueError("indices length must match x rows")
    out_data = _accumulate_rows(idx, x.data, num_rows)

    def bw(g):
        return [(x, g[idx])]

    return _emit(tape, "scatter_add_rows", out_data, bw)


# ---------------------------------------------------------------------------
# backward pass


def backward(tape: Tape, loss: Tensor):
    """Accumulate gradients of a scalar loss into all requires_grad tensors."""
    if tape._consumed:
        raise RuntimeError("tape already consumed; re-record before backward")
    if loss.shape != (1, 1):
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape._consumed = True
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape._nodes):
        g = grads.pop(id(node.out), None)
        holders.pop(id(node.out), None)
        if g is None:
            continue
        for t, dt in node.backward(g):
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + dt
            else:
                grads[key] = dt
                holders[key] = t
    for key, t in holders.items():
        if t.requires_grad:
            g = grads[key]
            t.grad = g if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckResult:
    """Max relative error plus entries skipped as non-differentiable kinks."""

    max_rel_err: float
    excluded: list = field(default_factory=list)  # (input_index, row, col)


def grad_check(f, inputs, h: float = 1e-5, kink_tol: float = 1e-3) -> GradCheckResult:
    """Compare reverse-mode gradients of f against central finite differences.

    `f(tape, *tensors) -> scalar Tensor` must be deterministic. Inputs are
    promoted to 64-bit copies. An entry where the one-sided differences
    disagree (a kink probed at its corner, e.g. leaky_relu at 0) is flagged
    as excluded instead of counted. Relative error per entry is
    |analytic - numeric| / max(1, |numeric|).
    """
    work = []
    for t in inputs:
        arr = t.data if isinstance(t, Tensor) else np.asarray(t)
        work.append(Tensor(np.array(arr, dtype=np.float64), requires_grad=True))

    tape = Tape()
    out = f(tape, *work)
    if out.shape != (1, 1):
        raise ValueError("grad_check target must be scalar")
    backward(tape, out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad for t in work]

    def run() -> float:
        return f(Tape(), *work).item()

    f0 = run()
    max_rel = 0.0
    excluded = []
    for i, t in enumerate(work):
        flat = t.data.reshape(-1)
        for j in range(flat.size):
            x0 = flat[j]
            flat[j] = x0 + h
            fp = run()
            flat[j] = x0 - h
            fm = run()
            flat[j] = x0
            central = (fp - fm) / (2.0 * h)
            one_sided_gap = abs((fp - f0) / h - (f0 - fm) / h)
            if one_sided_gap > kink_tol * max(1.0, abs(central)):
                excluded.append((i, j // t.shape[1], j % t.shape[1]))
                continue
            rel = abs(analytic[i].reshape(-1)[j] - central) / max(1.0, abs(central))
            max_rel = max(max_rel, rel)
    return GradCheckResult(max_rel_err=max_rel, excluded=excluded)


# ---------------------------------------------------------------------------
# adaptive-moment updates


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def init(cls, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: dict, grads: dict, state: AdamState):
    """Bias-corrected adaptive-moment update, applied in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape mismatch for '{name}': {g.shape} vs {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# parameter checkpoint file


def save_params(path, arrays: dict):
    """Write named float arrays as a params.bin checkpoint (magic HGP1)."""
    items = sorted(arrays.items())
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<I", len(items)))
        for name, arr in items:
            data = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
            if data.ndim != 2:
                raise ValueError(f"array '{name}' must be 2-D")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<QQ", data.shape[0], data.shape[1]))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def load_params(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != PARAMS_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {PARAMS_MAGIC!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            rows, cols = struct.unpack("<QQ", fh.read(16))
            buf = fh.read(rows * cols * 4)
            if len(buf) != rows * cols * 4:
                raise ValueError(f"{path}: truncated data for array '{name}'")
            out[name] = np.frombuffer(buf, dtype="<f4").reshape(rows, cols).astype(np.float32)
        return out
