"""Dense float tensors with tape-based reverse-mode differentiation.

The model state lives in float32; gradient checking promotes to float64
internally. Ops are plain functions over `Tensor` (no operator-overloading
graph): while a `GradTape` is active they append records in execution order,
and `GradTape.backward` replays those records in reverse to accumulate
gradients into every `requires_grad` leaf. Fixed op order makes runs
bit-reproducible on a given platform.

Supported shapes are exactly the ones the model needs (vectors, matrices,
row-broadcast bias adds); there is no general broadcasting.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .exceptions import DegenerateVectorError, NumericError, ParameterError, ShapeError

NORM_EPS = 1e-12  # below this a vector has no usable direction

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class Tensor:
    """A dense row-major array plus gradient bookkeeping.

    `data` is always float32 or float64; `grad`, when populated by a
    backward pass, is a same-shape array. Tensors are treated as immutable
    after construction except for explicit in-place optimizer updates.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=requires_grad)

    @staticmethod
    def scalar(value: float, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.asarray(value, dtype=np.float32), requires_grad=requires_grad)


def assert_finite(t: Tensor, what: str = "tensor") -> None:
    """Raise NumericError if `t` carries NaN or Inf."""
    if not t.is_finite():
        raise NumericError(f"non-finite values in {what}")


# --------------------------------------------------------------------------
# Tape


class _Record:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


_TAPE_STACK: list["GradTape"] = []


def _active_tape() -> "GradTape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def is_recording() -> bool:
    """True while a GradTape is active."""
    return bool(_TAPE_STACK)


class GradTape:
    """Ordered record of primitive applications for one backward replay.

    Use as a context manager around the forward pass, then call
    `backward(loss)` once. Replaying in reverse record order accumulates a
    gradient into each `requires_grad` leaf exactly once per replay.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._tracked: set[int] = set()
        self._replayed = False

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def _tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def _record(self, inputs: tuple[Tensor, ...], output: Tensor, backward) -> None:
        self._records.append(_Record(inputs, output, backward))
        self._tracked.add(id(output))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(leaf) into `.grad` of every requires_grad leaf."""
        if self._replayed:
            raise RuntimeError("tape already replayed; build a new tape per step")
        if root.size != 1:
            raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
        self._replayed = True

        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for rec in reversed(self._records):
            out_grad = grads.pop(id(rec.output), None)
            if out_grad is None:
                continue
            in_grads = rec.backward(out_grad)
            for t, g in zip(rec.inputs, in_grads):
                if g is None or not self._tracks(t):
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
            if rec.output.requires_grad:
                # root or an explicitly-tracked intermediate
                _write_grad(rec.output, out_grad)

        # leaves: ids remaining in the dict that belong to requires_grad tensors
        leaf_by_id: dict[int, Tensor] = {}
        for rec in self._records:
            for t in rec.inputs:
                if t.requires_grad:
                    leaf_by_id[id(t)] = t
        for key, g in grads.items():
            t = leaf_by_id.get(key)
            if t is not None:
                _write_grad(t, g)


def _write_grad(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad = t.grad + g.astype(t.data.dtype, copy=False)


def _emit(inputs: tuple[Tensor, ...], out_data: np.ndarray, backward) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(tape._tracks(t) for t in inputs):
        tape._record(inputs, out, backward)
    return out


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


# --------------------------------------------------------------------------
# Primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} vs {b.shape}")
    return _emit((a, b), a.data + b.data, lambda g: (g, g))


def add_rowvec(mat: Tensor, vec: Tensor) -> Tensor:
    """Add a length-n vector to every row of an m-by-n matrix."""
    if mat.ndim != 2 or vec.ndim != 1 or mat.shape[1] != vec.shape[0]:
        raise ShapeError(f"add_rowvec: shapes {mat.shape} vs {vec.shape}")
    return _emit((mat, vec), mat.data + vec.data, lambda g: (g, g.sum(axis=0)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit((a,), a.data * c, lambda g: (g * c,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} vs {b.shape}")
    a_data, b_data = a.data, b.data
    return _emit((a, b), a_data * b_data, lambda g: (g * b_data, g * a_data))


def mul_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a scalar (0-d) tensor, e.g. a learnable temperature."""
    if s.size != 1:
        raise ShapeError(f"mul_scalar: scalar operand has shape {s.shape}")
    a_data, s_data = a.data, s.data

    def backward(g):
        ds = np.asarray((g * a_data).sum(), dtype=s_data.dtype).reshape(s_data.shape)
        return g * s_data, ds

    return _emit((a, s), a_data * s_data, backward)


def reciprocal(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore"):  # Inf is the detectable error state downstream
        y = 1.0 / a.data
    return _emit((a,), y, lambda g: (-g * y * y,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions {a.shape} vs {b.shape}")
    a_data, b_data = a.data, b.data
    return _emit(
        (a, b),
        a_data @ b_data,
        lambda g: (g @ b_data.T, a_data.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.shape}")
    return _emit((a,), a.data.T.copy(), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    return _emit((a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


def scalar_like(value: float, ref: Tensor) -> Tensor:
    """Constant 0-d tensor in ref's dtype."""
    return Tensor(np.asarray(value, dtype=ref.data.dtype))


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice of a matrix; backward scatters into the range."""
    if a.ndim != 2:
        raise ShapeError(f"slice_rows: expected 2-D, got {a.shape}")
    if not (0 <= start < stop <= a.shape[0]):
        raise ParameterError(f"slice_rows: bad range [{start}, {stop}) for {a.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop, :] = g
        return (full,)

    return _emit((a,), a.data[start:stop, :].copy(), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous column slice of a matrix; backward scatters into the range."""
    if a.ndim != 2:
        raise ShapeError(f"slice_cols: expected 2-D, got {a.shape}")
    if not (0 <= start < stop <= a.shape[1]):
        raise ParameterError(f"slice_cols: bad range [{start}, {stop}) for {a.shape}")

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _emit((a,), a.data[:, start:stop].copy(), backward)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ParameterError("concat: empty input list")
    if axis not in (0, 1):
        raise ParameterError(f"concat: axis {axis} unsupported")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _emit(tuple(parts), np.concatenate([p.data for p in parts], axis=axis), backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack length-d vectors into an n-by-d matrix."""
    return concat([reshape(r, (1, r.shape[0])) for r in rows], axis=0)


def sum_all(a: Tensor) -> Tensor:
    return _emit((a,), np.asarray(a.data.sum(), dtype=a.data.dtype), lambda g: (np.full_like(a.data, float(g)),))


def sum_axis(a: Tensor, axis: int) -> Tensor:
    return _emit(
        (a,),
        a.data.sum(axis=axis),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), a.shape).astype(a.data.dtype),),
    )


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.shape[axis]
    return _emit(
        (a,),
        a.data.mean(axis=axis),
        lambda g: (np.broadcast_to(np.expand_dims(g / n, axis), a.shape).astype(a.data.dtype),),
    )


def softmax(a: Tensor, tau: float = 1.0) -> Tensor:
    """Temperature softmax along the last axis, computed with max-subtraction.

    Outputs are non-negative and sum to 1 along the last axis.
    """
    if float(tau) <= 0.0:
        raise ParameterError(f"softmax: temperature must be positive, got {tau}")
    tau = float(tau)
    z = a.data / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return ((y * (g - inner)) / tau,)

    return _emit((a,), y, backward)


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    probs = np.exp(y)

    def backward(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _emit((a,), y, backward)


def l2_normalize(v: Tensor) -> Tensor:
    """Scale a vector to unit norm; rejects near-zero norms."""
    if v.ndim != 1:
        raise ShapeError(f"l2_normalize: expected 1-D, got {v.shape}")
    n = float(np.linalg.norm(v.data))
    if n <= NORM_EPS:
        raise DegenerateVectorError(f"l2_normalize: norm {n} below {NORM_EPS}")
    y = v.data / n

    def backward(g):
        return ((g - y * float(y @ g)) / n,)

    return _emit((v,), y, backward)


def l2_normalize_rows(m: Tensor) -> Tensor:
    """Unit-normalize each row of a matrix."""
    if m.ndim != 2:
        raise ShapeError(f"l2_normalize_rows: expected 2-D, got {m.shape}")
    norms = np.linalg.norm(m.data, axis=1, keepdims=True)
    bad = np.nonzero(norms.ravel() <= NORM_EPS)[0]
    if bad.size:
        raise DegenerateVectorError(f"l2_normalize_rows: row {int(bad[0])} has norm below {NORM_EPS}")
    y = m.data / norms

    def backward(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        return ((g - y * inner) / norms,)

    return _emit((m,), y, backward)


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two vectors, clamped to [-1, 1].

    Identical arrays short-circuit to exactly 1 (with the correct zero
    gradient), so self-similarity is exact rather than 1 - O(eps).
    """
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine_sim: shapes {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise DegenerateVectorError("cosine_sim: degenerate input norm")
    if a.data is b.data or np.array_equal(a.data, b.data):
        one = np.asarray(1.0, dtype=a.data.dtype)
        return _emit((a, b), one, lambda g: (np.zeros_like(a.data), np.zeros_like(b.data)))
    raw = float(a.data @ b.data) / (na * nb)
    c = min(1.0, max(-1.0, raw))
    a_data, b_data = a.data, b.data

    def backward(g):
        # the clamp only trims float fuzz; the analytic gradient is used throughout
        g = float(g)
        da = g * (b_data / (na * nb) - raw * a_data / (na * na))
        db = g * (a_data / (na * nb) - raw * b_data / (nb * nb))
        return da, db

    return _emit((a, b), np.asarray(c, dtype=a.data.dtype), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map x @ w + b with the bias broadcast over rows."""
    return add_rowvec(matmul(x, w), b)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if x.shape[-1] != gamma.shape[0] or gamma.shape != beta.shape:
        raise ShapeError(f"layer_norm: shapes {x.shape}, {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    y = xhat * gamma.data + beta.data
    d = x.shape[-1]
    gamma_data = gamma.data

    def backward(g):
        dbeta = g.reshape(-1, d).sum(axis=0)
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dxhat = g * gamma_data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma.astype(gamma_data.dtype), dbeta.astype(gamma_data.dtype)

    return _emit((x, gamma, beta), y, backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    y = x.data * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return _emit((x,), y, backward)


# --------------------------------------------------------------------------
# Gradient checking


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-3,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be a pure, deterministic scalar function of its tensor inputs.
    Inputs are promoted to float64 internally so the comparison is not
    limited by float32 roundoff. The relative error at each coordinate is
    |analytic - cd| / max(|analytic|, |cd|, 1e-8).
    """
    if not (1e-4 <= eps <= 1e-2):
        raise ParameterError(f"grad_check: eps {eps} outside [1e-4, 1e-2]")
    work = [Tensor(t.data.astype(np.float64), requires_grad=True) for t in inputs]

    with GradTape() as tape:
        out = f(*work)
        if out.size != 1:
            raise ShapeError("grad_check: f must return a scalar")
        tape.backward(out)

    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in work]
    for g in analytic:
        if not np.all(np.isfinite(g)):
            raise NumericError("grad_check: non-finite analytic gradient")

    worst = 0.0
    for t, an in zip(work, analytic):
        flat = t.data.reshape(-1)
        an_flat = an.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            f_plus = float(f(*work).data)
            flat[j] = orig - eps
            f_minus = float(f(*work).data)
            flat[j] = orig
            cd = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(an_flat[j]), abs(cd), 1e-8)
            worst = max(worst, abs(an_flat[j] - cd) / denom)
    return worst
