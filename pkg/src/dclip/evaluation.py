"""Retrieval and zero-shot metrics over cosine similarity matrices.

All rankings are total orders: candidates sort by descending similarity with
ties broken by ascending candidate id, so every metric is reproducible
bit-for-bit. Recall@K counts queries whose single ground-truth match ranks in
the top K; MAP averages per-query average precision over the full ranking
(multi-relevant queries supported); zero-shot classification ranks class
prompt embeddings per image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import InputError, ShapeError, ValidationError


@dataclass
class SimilarityMatrix:
    """Query-by-candidate similarity values with their id lists."""

    values: np.ndarray  # [Q, C]
    row_ids: list[str]
    col_ids: list[str]

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ShapeError(f"similarity values must be 2-D, got {self.values.shape}")
        if self.values.shape != (len(self.row_ids), len(self.col_ids)):
            raise ShapeError(
                f"values {self.values.shape} vs ids ({len(self.row_ids)}, {len(self.col_ids)})"
            )
        if not np.all(np.isfinite(self.values)):
            raise InputError("similarity matrix contains non-finite values")

    def transposed(self) -> "SimilarityMatrix":
        return SimilarityMatrix(self.values.T.copy(), list(self.col_ids), list(self.row_ids))


def cosine_similarity_matrix(
    queries: np.ndarray, candidates: np.ndarray, row_ids: list[str], col_ids: list[str]
) -> SimilarityMatrix:
    qn = queries / np.linalg.norm(queries, axis=1, keepdims=True)
    cn = candidates / np.linalg.norm(candidates, axis=1, keepdims=True)
    return SimilarityMatrix((qn @ cn.T).astype(np.float64), row_ids, col_ids)


def _ranking(sim: SimilarityMatrix, row: int) -> list[int]:
    # descending similarity, ties by ascending candidate id
    values = sim.values[row]
    return sorted(range(len(sim.col_ids)), key=lambda j: (-values[j], sim.col_ids[j]))


def recall_at_k(sim: SimilarityMatrix, k: int, ground_truth: dict[str, str]) -> float:
    """Fraction of queries whose ground-truth candidate ranks within the top k."""
    if k < 1:
        raise InputError(f"recall_at_k: k must be >= 1, got {k}")
    col_index = {cid: j for j, cid in enumerate(sim.col_ids)}
    hits = 0
    for i, row_id in enumerate(sim.row_ids):
        target = ground_truth.get(row_id)
        if target is None or target not in col_index:
            raise InputError(f"recall_at_k: no ground-truth candidate for query {row_id!r}")
        order = _ranking(sim, i)
        if col_index[target] in order[:k]:
            hits += 1
    return hits / len(sim.row_ids)


def mean_average_precision(sim: SimilarityMatrix, relevance: dict[str, set[str]]) -> float:
    """Mean over queries of average precision across the full ranking."""
    col_index = {cid: j for j, cid in enumerate(sim.col_ids)}
    ap_values = []
    for i, row_id in enumerate(sim.row_ids):
        relevant = relevance.get(row_id)
        if not relevant:
            raise InputError(f"mean_average_precision: empty relevance set for query {row_id!r}")
        rel_cols = set()
        for cid in relevant:
            if cid not in col_index:
                raise InputError(f"mean_average_precision: unknown candidate {cid!r}")
            rel_cols.add(col_index[cid])
        order = _ranking(sim, i)
        hits = 0
        precision_sum = 0.0
        for rank, j in enumerate(order, start=1):
            if j in rel_cols:
                hits += 1
                precision_sum += hits / rank
        ap_values.append(precision_sum / len(rel_cols))
    return sum(ap_values) / len(ap_values)


def zero_shot_topk(
    image_embs: np.ndarray, class_prompt_embs: np.ndarray, labels: list[int], k: int
) -> float:
    """Top-k accuracy of nearest-prompt classification."""
    n_classes = class_prompt_embs.shape[0]
    for lab in labels:
        if not 0 <= lab < n_classes:
            raise InputError(f"zero_shot_topk: label {lab} out of range for {n_classes} classes")
    if len(labels) != image_embs.shape[0]:
        raise InputError(f"zero_shot_topk: {len(labels)} labels for {image_embs.shape[0]} images")
    sim = cosine_similarity_matrix(
        image_embs, class_prompt_embs, [str(i) for i in range(len(labels))], [f"{c:06d}" for c in range(n_classes)]
    )
    hits = 0
    for i, lab in enumerate(labels):
        order = _ranking(sim, i)
        if lab in order[:k]:
            hits += 1
    return hits / len(labels)


def confusion_matrix(
    image_embs: np.ndarray, class_prompt_embs: np.ndarray, labels: list[int]
) -> np.ndarray:
    """counts[true][predicted] under top-1 prompt classification."""
    n_classes = class_prompt_embs.shape[0]
    for lab in labels:
        if not 0 <= lab < n_classes:
            raise InputError(f"confusion_matrix: label {lab} out of range for {n_classes} classes")
    sim = cosine_similarity_matrix(
        image_embs, class_prompt_embs, [str(i) for i in range(len(labels))], [f"{c:06d}" for c in range(n_classes)]
    )
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for i, lab in enumerate(labels):
        predicted = _ranking(sim, i)[0]
        counts[lab, predicted] += 1
    return counts


def write_confusion_csv(path, counts: np.ndarray) -> None:
    n = counts.shape[0]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("true\\pred," + ",".join(str(c) for c in range(n)) + "\n")
        for r in range(n):
            fh.write(str(r) + "," + ",".join(str(int(v)) for v in counts[r]) + "\n")


# --------------------------------------------------------------------------
# Report assembly


@dataclass
class RetrievalReport:
    """All eval outputs for one embedding set: both retrieval directions,
    optional zero-shot accuracy, and the query count."""

    t2i: dict[str, float]
    i2t: dict[str, float]
    zero_shot: dict[str, float | None]
    n_queries: int

    def to_json(self) -> str:
        payload = {
            "direction": {"t2i": self.t2i, "i2t": self.i2t},
            "zero_shot": self.zero_shot,
            "n_queries": self.n_queries,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _direction_metrics(sim: SimilarityMatrix) -> dict[str, float]:
    gt = {rid: cid for rid, cid in zip(sim.row_ids, sim.col_ids)}
    relevance = {rid: {cid} for rid, cid in gt.items()}
    return {
        "r1": recall_at_k(sim, 1, gt),
        "r5": recall_at_k(sim, 5, gt),
        "r10": recall_at_k(sim, 10, gt),
        "map": mean_average_precision(sim, relevance),
    }


def build_report(
    image_ids: list[str],
    image_embs: np.ndarray,
    text_ids: list[str],
    text_embs: np.ndarray,
    labels: list[int] | None = None,
    class_prompt_embs: np.ndarray | None = None,
) -> RetrievalReport:
    """Compute both retrieval directions from one similarity matrix and its
    transpose, plus zero-shot accuracy when labels and prompts are supplied.

    Queries pair with candidates positionally, so the two id lists must
    align. Ids are disambiguated per side ("text:"/"image:" prefixes) so the
    identical-cache case still ranks deterministically.
    """
    if image_ids != text_ids:
        raise ValidationError("image/text ids are not aligned", field="ids")
    if image_embs.shape[0] != len(image_ids) or text_embs.shape[0] != len(text_ids):
        raise InputError("embedding row counts do not match id lists")

    text_side = [f"text:{i}" for i in text_ids]
    image_side = [f"image:{i}" for i in image_ids]
    t2i_sim = cosine_similarity_matrix(text_embs, image_embs, text_side, image_side)
    t2i = _direction_metrics(t2i_sim)
    i2t = _direction_metrics(t2i_sim.transposed())

    zero_shot: dict[str, float | None] = {"top1": None, "top5": None}
    if labels is not None and class_prompt_embs is not None:
        n_classes = class_prompt_embs.shape[0]
        zero_shot = {
            "top1": zero_shot_topk(image_embs, class_prompt_embs, labels, 1),
            "top5": zero_shot_topk(image_embs, class_prompt_embs, labels, min(5, n_classes)),
        }
    return RetrievalReport(t2i=t2i, i2t=i2t, zero_shot=zero_shot, n_queries=len(image_ids))
