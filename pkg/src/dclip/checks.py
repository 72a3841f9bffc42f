"""Gradient-correctness suite: every differentiable primitive plus the model
composites, checked against central differences on randomized inputs.

Each named check builds small random tensors from its own stream and returns
the max relative error from `grad_check`. `run_suite` repeats every check
across seeds and reports the worst error per name; everything must come in
at or under TOLERANCE.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .fusion import AttentionBlock, FusionParams, aggregate_global, cross_attend, fuse_and_aggregate
from .losses import info_nce
from .rng import stream
from .tensor import Tensor, grad_check

TOLERANCE = 1e-3
DEFAULT_EPS = 1e-3


def _rand(rng, *shape) -> Tensor:
    return Tensor(rng.normal(size=shape).astype(np.float32))


def _rand_proj(rng, dim: int) -> Tensor:
    # projection matrices at their actual init scale; unit-variance entries
    # would saturate the attention softmax and poison the FD comparison
    bound = 1.0 / np.sqrt(dim)
    return Tensor(rng.uniform(-bound, bound, size=(dim, dim)).astype(np.float32))


def _sq(t: Tensor) -> Tensor:
    # squared-sum readout turns any output into a scalar with rich gradients
    return T.sum_all(T.mul(t, t))


def _check_add(rng, eps):
    a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
    return grad_check(lambda a, b: _sq(T.add(a, b)), [a, b], eps)


def _check_add_rowvec(rng, eps):
    m, v = _rand(rng, 3, 4), _rand(rng, 4)
    return grad_check(lambda m, v: _sq(T.add_rowvec(m, v)), [m, v], eps)


def _check_scale(rng, eps):
    a = _rand(rng, 5)
    return grad_check(lambda a: _sq(T.scale(a, -1.7)), [a], eps)


def _check_mul(rng, eps):
    a, b = _rand(rng, 2, 3), _rand(rng, 2, 3)
    return grad_check(lambda a, b: T.sum_all(T.mul(a, b)), [a, b], eps)


def _check_mul_scalar(rng, eps):
    a = _rand(rng, 3, 3)
    s = Tensor(np.asarray(rng.uniform(0.5, 2.0), dtype=np.float32))
    return grad_check(lambda a, s: _sq(T.mul_scalar(a, s)), [a, s], eps)


def _check_reciprocal(rng, eps):
    a = Tensor((rng.uniform(0.5, 2.0, size=6)).astype(np.float32))
    return grad_check(lambda a: _sq(T.reciprocal(a)), [a], eps)


def _check_matmul(rng, eps):
    a, b = _rand(rng, 4, 5), _rand(rng, 5, 3)
    return grad_check(lambda a, b: _sq(T.matmul(a, b)), [a, b], eps)


def _check_transpose(rng, eps):
    a = _rand(rng, 3, 5)
    return grad_check(lambda a: _sq(T.matmul(T.transpose(a), a)), [a], eps)


def _check_reshape(rng, eps):
    a = _rand(rng, 2, 6)
    return grad_check(lambda a: _sq(T.reshape(a, (3, 4))), [a], eps)


def _check_slice_rows(rng, eps):
    a = _rand(rng, 5, 3)
    return grad_check(lambda a: _sq(T.slice_rows(a, 1, 4)), [a], eps)


def _check_slice_cols(rng, eps):
    a = _rand(rng, 3, 6)
    return grad_check(lambda a: _sq(T.slice_cols(a, 2, 5)), [a], eps)


def _check_concat(rng, eps):
    a, b = _rand(rng, 2, 3), _rand(rng, 4, 3)
    return grad_check(lambda a, b: _sq(T.concat([a, b], axis=0)), [a, b], eps)


def _check_sum_all(rng, eps):
    a = _rand(rng, 3, 3)
    return grad_check(lambda a: T.sum_all(a), [a], eps)


def _check_sum_axis(rng, eps):
    a = _rand(rng, 4, 3)
    return grad_check(lambda a: _sq(T.sum_axis(a, 0)), [a], eps)


def _check_mean_axis(rng, eps):
    a = _rand(rng, 4, 3)
    return grad_check(lambda a: _sq(T.mean_axis(a, 1)), [a], eps)


def _check_softmax(rng, eps):
    a = _rand(rng, 2, 5)
    tau = float(rng.uniform(0.4, 2.0))
    return grad_check(lambda a: _sq(T.softmax(a, tau=tau)), [a], eps)


def _check_log_softmax(rng, eps):
    a = _rand(rng, 2, 5)
    return grad_check(lambda a: _sq(T.log_softmax(a)), [a], eps)


def _check_l2_normalize(rng, eps):
    v = Tensor((rng.normal(size=6) + np.sign(rng.normal(size=6)) * 0.5).astype(np.float32))
    return grad_check(lambda v: _sq(T.l2_normalize(v)), [v], eps)


def _check_l2_normalize_rows(rng, eps):
    m = Tensor((rng.normal(size=(3, 5)) + 0.5).astype(np.float32))
    return grad_check(lambda m: _sq(T.l2_normalize_rows(m)), [m], eps)


def _check_cosine_sim(rng, eps):
    a, b = _rand(rng, 6), _rand(rng, 6)
    return grad_check(lambda a, b: T.cosine_sim(a, b), [a, b], eps)


def _check_linear(rng, eps):
    x, w, b = _rand(rng, 3, 4), _rand(rng, 4, 4), _rand(rng, 4)
    return grad_check(lambda x, w, b: _sq(T.linear(x, w, b)), [x, w, b], eps)


def _check_layer_norm(rng, eps):
    x = _rand(rng, 3, 6)
    gamma = Tensor((1.0 + 0.2 * rng.normal(size=6)).astype(np.float32))
    beta = Tensor((0.2 * rng.normal(size=6)).astype(np.float32))
    return grad_check(lambda x, g, b: _sq(T.layer_norm(x, g, b)), [x, gamma, beta], eps)


def _check_gelu(rng, eps):
    x = _rand(rng, 2, 5)
    return grad_check(lambda x: _sq(T.gelu(x)), [x], eps)


def _check_aggregate_global(rng, eps):
    h = _rand(rng, 5, 6)
    tau = float(rng.uniform(0.3, 1.5))
    return grad_check(lambda h: _sq(aggregate_global(h, tau).global_emb), [h], eps)


def _check_cross_attend(rng, eps):
    d, heads = 8, 2
    queries = rng.normal(size=(3, d)).astype(np.float32)
    context = rng.normal(size=(4, d)).astype(np.float32)
    mats = [_rand_proj(rng, d) for _ in range(4)]

    def f(wq, wk, wv, wo):
        block = AttentionBlock(wq, wk, wv, wo, heads)
        return _sq(cross_attend(Tensor(queries), Tensor(context), block))

    return grad_check(f, mats, eps)


def _check_info_nce(rng, eps):
    zi, zt = _rand(rng, 4, 8), _rand(rng, 4, 8)
    tau = float(rng.uniform(0.2, 1.0))
    return grad_check(lambda zi, zt: info_nce(zi, zt, tau), [zi, zt], eps)


def _check_teacher_loss(rng, eps):
    """Full teacher objective differentiated through every fusion parameter."""
    d, heads, batch = 8, 2, 3
    samples = []
    text_rows = []
    for _ in range(batch):
        t_len = int(rng.integers(2, 4))
        r_len = int(rng.integers(2, 4))
        samples.append(
            (
                rng.normal(size=(t_len, d)).astype(np.float32),
                rng.normal(size=(r_len, d)).astype(np.float32),
            )
        )
        row = rng.normal(size=d)
        text_rows.append((row / np.linalg.norm(row)).astype(np.float32))
    text_matrix = np.stack(text_rows)
    mats = [_rand_proj(rng, d) for _ in range(8)]
    taus = [
        Tensor(np.asarray(rng.uniform(0.3, 1.0), dtype=np.float32)),
        Tensor(np.asarray(rng.uniform(0.3, 1.0), dtype=np.float32)),
    ]

    def f(q1, k1, v1, o1, q2, k2, v2, o2, agg_tau, loss_tau):
        params = FusionParams(
            text_to_region=AttentionBlock(q1, k1, v1, o1, heads),
            region_to_text=AttentionBlock(q2, k2, v2, o2, heads),
            agg_tau=agg_tau,
        )
        z_rows = [
            T.l2_normalize(fuse_and_aggregate(Tensor(tf), Tensor(rr), params))
            for tf, rr in samples
        ]
        return info_nce(T.stack_rows(z_rows), Tensor(text_matrix), loss_tau)

    return grad_check(f, mats + taus, eps)


CHECKS = {
    "add": _check_add,
    "add_rowvec": _check_add_rowvec,
    "scale": _check_scale,
    "mul": _check_mul,
    "mul_scalar": _check_mul_scalar,
    "reciprocal": _check_reciprocal,
    "matmul": _check_matmul,
    "transpose": _check_transpose,
    "reshape": _check_reshape,
    "slice_rows": _check_slice_rows,
    "slice_cols": _check_slice_cols,
    "concat": _check_concat,
    "sum_all": _check_sum_all,
    "sum_axis": _check_sum_axis,
    "mean_axis": _check_mean_axis,
    "softmax": _check_softmax,
    "log_softmax": _check_log_softmax,
    "l2_normalize": _check_l2_normalize,
    "l2_normalize_rows": _check_l2_normalize_rows,
    "cosine_sim": _check_cosine_sim,
    "linear": _check_linear,
    "layer_norm": _check_layer_norm,
    "gelu": _check_gelu,
    "aggregate_global": _check_aggregate_global,
    "cross_attend": _check_cross_attend,
    "info_nce": _check_info_nce,
    "teacher_loss": _check_teacher_loss,
}


def run_suite(seeds: int = 20, eps: float = DEFAULT_EPS) -> dict[str, float]:
    """Worst max-relative-error per check across `seeds` random draws."""
    worst = {name: 0.0 for name in CHECKS}
    for seed in range(seeds):
        for name, fn in CHECKS.items():
            rng = stream(seed, f"gradcheck/{name}")
            worst[name] = max(worst[name], fn(rng, eps))
    return worst
