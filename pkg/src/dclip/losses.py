"""Training objectives: symmetric InfoNCE, cosine distillation, composites.

InfoNCE normalizes its inputs internally, builds the batch similarity matrix
at temperature tau, and averages softmax cross-entropy over rows and columns
(matched pairs sit on the diagonal). Cosine distillation is 1 - cos between a
student embedding and its target. The student composite adds InfoNCE, the two
cosine terms, and optionally an anchor term tying the student's image
embeddings back to the frozen base encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import ParameterError, ShapeError
from .tensor import Tensor


@dataclass
class LossValue:
    """A composite loss: tape-connected total plus a per-component breakdown."""

    total: Tensor
    components: dict[str, float]
    has_grad: bool


def _as_tau_inverse(logits: Tensor, tau) -> Tensor:
    if isinstance(tau, Tensor):
        if float(tau.data) <= 0:
            raise ParameterError(f"temperature must be positive, got {float(tau.data)}")
        return T.mul_scalar(logits, T.reciprocal(tau))
    tau = float(tau)
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    return T.scale(logits, 1.0 / tau)


def info_nce(z_img: Tensor, z_txt: Tensor, tau) -> Tensor:
    """Symmetric contrastive loss over a batch of paired embeddings.

    Rows are L2-normalized internally; row i of each matrix is the positive
    for row i of the other. Returns (1/2N) * [sum_i CE(L[i,:], i) +
    sum_j CE(L[:,j], j)] where L is the scaled similarity matrix.
    """
    if z_img.ndim != 2 or z_txt.ndim != 2 or z_img.shape != z_txt.shape:
        raise ShapeError(f"info_nce: shapes {z_img.shape} vs {z_txt.shape}")
    n = z_img.shape[0]
    if n < 2:
        raise ParameterError("info_nce: need at least 2 pairs (contrastive needs negatives)")
    sims = T.matmul(T.l2_normalize_rows(z_img), T.transpose(T.l2_normalize_rows(z_txt)))
    logits = _as_tau_inverse(sims, tau)
    diag = Tensor(np.eye(n, dtype=logits.data.dtype))
    row_terms = T.mul(T.log_softmax(logits), diag)
    col_terms = T.mul(T.log_softmax(T.transpose(logits)), diag)
    return T.scale(T.sum_all(T.add(row_terms, col_terms)), -1.0 / (2.0 * n))


def cosine_distill(z_student: Tensor, z_target: Tensor) -> Tensor:
    """1 - cos(student, target): 0 iff colinear same-direction, 2 if opposite."""
    return T.add(T.scalar_like(1.0, z_student), T.scale(T.cosine_sim(z_student, z_target), -1.0))


def teacher_loss(z_img: Tensor, z_txt: Tensor, tau) -> Tensor:
    """The teacher objective is InfoNCE over its fused image embeddings and
    the frozen text embeddings; gradients reach only the fusion parameters
    because the text side enters as constants."""
    return info_nce(z_img, z_txt, tau)


def _mean_rowwise_distill(a: Tensor, b: Tensor) -> Tensor:
    n, d = a.shape
    terms = [
        cosine_distill(
            T.reshape(T.slice_rows(a, i, i + 1), (d,)),
            T.reshape(T.slice_rows(b, i, i + 1), (d,)),
        )
        for i in range(n)
    ]
    return T.mean_axis(T.concat([T.reshape(t, (1,)) for t in terms], axis=0), 0)


def student_loss(
    student_img: Tensor,
    student_txt: Tensor,
    teacher_img: Tensor,
    teacher_txt: Tensor,
    tau,
    anchor_img: Tensor | None = None,
    anchor_weight: float = 1.0,
) -> LossValue:
    """Composite student objective.

    total = InfoNCE(student pairs) + mean cos-distill on text + mean
    cos-distill on images [+ anchor_weight * mean cos-distill to the frozen
    base image embeddings]. All four embedding sets must be batch-aligned.
    Component values are the (weighted) contributions, so they sum to total.
    """
    shapes = {student_img.shape, student_txt.shape, teacher_img.shape, teacher_txt.shape}
    if anchor_img is not None:
        shapes.add(anchor_img.shape)
    if len(shapes) != 1:
        raise ShapeError(f"student_loss: misaligned batch shapes {sorted(shapes)}")

    contrastive = info_nce(student_img, student_txt, tau)
    cos_text = _mean_rowwise_distill(student_txt, teacher_txt)
    cos_image = _mean_rowwise_distill(student_img, teacher_img)
    total = T.add(T.add(contrastive, cos_text), cos_image)
    components = {
        "contrastive": float(contrastive.data),
        "cos_T": float(cos_text.data),
        "cos_I": float(cos_image.data),
        "anchor": 0.0,
    }
    if anchor_img is not None:
        anchor = T.scale(_mean_rowwise_distill(student_img, anchor_img), anchor_weight)
        total = T.add(total, anchor)
        components["anchor"] = float(anchor.data)
    return LossValue(total=total, components=components, has_grad=T.is_recording())
