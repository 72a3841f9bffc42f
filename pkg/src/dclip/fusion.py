"""Bidirectional cross-modal attention and global aggregation.

Two disjoint multi-head attention blocks let caption tokens attend to region
embeddings and vice versa; the attended region stream is then collapsed into
one global embedding by softmax-weighting each row by its cosine similarity
to the mean row, divided by a learnable temperature. These blocks (plus that
temperature) are the only trainable teacher state.

Attention uses pre-output residual connections and no feed-forward sublayer.
Rotary position rotations, when requested, are applied to queries and keys
inside attention only, so value paths (and therefore permutation/identity
properties of the outputs) are unaffected.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import regions as regions_mod
from . import tensor as T
from .exceptions import ParameterError, ShapeError
from .rng import stream, uniform_init
from .tensor import Tensor

ROTARY_BASE = 10000.0
TAU_MIN, TAU_MAX = 1e-3, 10.0
TAU_INIT = 0.07


# --------------------------------------------------------------------------
# Rotary helpers


@lru_cache(maxsize=32)
def _pair_swap(head_dim: int) -> np.ndarray:
    # x -> (-x1, x0, -x3, x2, ...): the 90-degree partner of each 2-D pair
    m = np.zeros((head_dim, head_dim), dtype=np.float32)
    for i in range(0, head_dim, 2):
        m[i, i + 1] = 1.0
        m[i + 1, i] = -1.0
    return m


def rotary_tables(positions: np.ndarray, head_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables, one row per position, cos[0]/sin[0] = identity rotation."""
    if head_dim % 2:
        raise ParameterError(f"rotary requires even head_dim, got {head_dim}")
    half = head_dim // 2
    inv_freq = ROTARY_BASE ** (-np.arange(half, dtype=np.float64) * 2.0 / head_dim)
    angles = np.outer(np.asarray(positions, dtype=np.float64), inv_freq)
    cos = np.repeat(np.cos(angles), 2, axis=1).astype(np.float32)
    sin = np.repeat(np.sin(angles), 2, axis=1).astype(np.float32)
    return cos, sin


def apply_rotary(x: Tensor, positions: np.ndarray) -> Tensor:
    """Rotate each row of x by its position (pairwise 2-D rotations)."""
    cos, sin = rotary_tables(positions, x.shape[1])
    dt = x.data.dtype
    cos_t = Tensor(cos.astype(dt, copy=False))
    sin_t = Tensor(sin.astype(dt, copy=False))
    swap = Tensor(_pair_swap(x.shape[1]).astype(dt, copy=False))
    return T.add(T.mul(x, cos_t), T.mul(T.matmul(x, swap), sin_t))


# --------------------------------------------------------------------------
# Attention


@dataclass
class AttentionBlock:
    """One multi-head attention layer: Q/K/V/output projections, no biases."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    num_heads: int

    @staticmethod
    def create(seed: int, name: str, embed_dim: int, num_heads: int) -> "AttentionBlock":
        if embed_dim % num_heads:
            raise ParameterError(f"embed_dim {embed_dim} not divisible by {num_heads} heads")
        make = lambda part: Tensor(uniform_init(seed, f"{name}/{part}", (embed_dim, embed_dim), embed_dim))
        return AttentionBlock(make("wq"), make("wk"), make("wv"), make("wo"), num_heads)

    def parameters(self) -> dict[str, Tensor]:
        return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo}

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters().values():
            p.requires_grad = flag

    def copy(self) -> "AttentionBlock":
        return AttentionBlock(self.wq.copy(), self.wk.copy(), self.wv.copy(), self.wo.copy(), self.num_heads)


def cross_attend(
    queries: Tensor,
    context: Tensor,
    block: AttentionBlock,
    q_positions: np.ndarray | None = None,
    kv_positions: np.ndarray | None = None,
) -> Tensor:
    """Multi-head attention of `queries` over `context`, plus residual.

    Softmax runs over context rows per head at scale 1/sqrt(head_dim). With
    zero value/output projections the output equals `queries` exactly.
    """
    if queries.ndim != 2 or context.ndim != 2:
        raise ShapeError(f"cross_attend: expected 2-D inputs, got {queries.shape}, {context.shape}")
    d = block.wq.shape[0]
    if queries.shape[1] != d or context.shape[1] != d:
        raise ShapeError(f"cross_attend: feature dim {queries.shape[1]}/{context.shape[1]} != {d}")
    heads = block.num_heads
    head_dim = d // heads
    inv_scale = 1.0 / float(np.sqrt(head_dim))

    q_all = T.matmul(queries, block.wq)
    k_all = T.matmul(context, block.wk)
    v_all = T.matmul(context, block.wv)

    outputs = []
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        q = T.slice_cols(q_all, lo, hi)
        k = T.slice_cols(k_all, lo, hi)
        v = T.slice_cols(v_all, lo, hi)
        if q_positions is not None:
            q = apply_rotary(q, q_positions)
        if kv_positions is not None:
            k = apply_rotary(k, kv_positions)
        scores = T.scale(T.matmul(q, T.transpose(k)), inv_scale)
        attn = T.softmax(scores)
        outputs.append(T.matmul(attn, v))

    merged = T.concat(outputs, axis=1)
    return T.add(queries, T.matmul(merged, block.wo))


@dataclass
class FusionParams:
    """The trainable teacher: two disjoint attention blocks + aggregation temperature."""

    text_to_region: AttentionBlock
    region_to_text: AttentionBlock
    agg_tau: Tensor  # 0-d, learnable, clamped to [TAU_MIN, TAU_MAX] after updates

    @staticmethod
    def create(embed_dim: int, num_heads: int, seed: int) -> "FusionParams":
        return FusionParams(
            text_to_region=AttentionBlock.create(seed, "fusion/text_to_region", embed_dim, num_heads),
            region_to_text=AttentionBlock.create(seed, "fusion/region_to_text", embed_dim, num_heads),
            agg_tau=Tensor(np.asarray(TAU_INIT, dtype=np.float32)),
        )

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for prefix, block in (("t2r", self.text_to_region), ("r2t", self.region_to_text)):
            for part, p in block.parameters().items():
                out[f"{prefix}.{part}"] = p
        out["agg_tau"] = self.agg_tau
        return out

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters().values():
            p.requires_grad = flag

    def copy(self) -> "FusionParams":
        return FusionParams(self.text_to_region.copy(), self.region_to_text.copy(), self.agg_tau.copy())

    def clamp_tau(self) -> None:
        np.clip(self.agg_tau.data, TAU_MIN, TAU_MAX, out=self.agg_tau.data)


def bidirectional_fuse(
    text_feats: Tensor, region_embs: Tensor, params: FusionParams
) -> tuple[Tensor, Tensor]:
    """Run both attention directions; the two blocks share no parameters."""
    if text_feats.shape[0] < 1 or region_embs.shape[0] < 1:
        raise ShapeError("bidirectional_fuse: both streams need at least one row")
    text_ctx = cross_attend(text_feats, region_embs, params.text_to_region)
    region_ctx = cross_attend(region_embs, text_feats, params.region_to_text)
    return text_ctx, region_ctx


# --------------------------------------------------------------------------
# Aggregation


@dataclass
class FusedBatch:
    """Attended rows, their aggregation weights (non-negative, sum 1), and the global embedding."""

    attended: Tensor  # [L, d]
    weights: Tensor  # [L]
    global_emb: Tensor  # [d]


def aggregate_global(h: Tensor, tau) -> FusedBatch:
    """Cosine-to-mean softmax aggregation of attended rows.

    Each row is weighted by softmax(cos(row, mean of rows) / tau); the global
    embedding is the weighted sum. `tau` may be a float or a learnable 0-d
    tensor. Differentiable with respect to `h` (and tau).
    """
    if h.ndim != 2 or h.shape[0] < 1:
        raise ShapeError(f"aggregate_global: expected non-empty 2-D input, got {h.shape}")
    length, dim = h.shape
    rows_unit = T.l2_normalize_rows(h)
    center = T.l2_normalize(T.mean_axis(h, 0))
    cos_row = T.transpose(T.matmul(rows_unit, T.reshape(center, (dim, 1))))  # [1, L]
    if isinstance(tau, Tensor):
        weights_row = T.softmax(T.mul_scalar(cos_row, T.reciprocal(tau)))
    else:
        weights_row = T.softmax(cos_row, tau=float(tau))
    global_emb = T.reshape(T.matmul(weights_row, h), (dim,))
    return FusedBatch(attended=h, weights=T.reshape(weights_row, (length,)), global_emb=global_emb)


def kmeans_cosine(points: np.ndarray, k: int, seed: int, max_iter: int = 20) -> np.ndarray:
    """Deterministic k-means++ under cosine distance; returns a label per row.

    Seeding draws from a named stream, assignment ties go to the lowest
    centroid index, and empty clusters keep their previous centroid.
    """
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"kmeans: need 1 <= k <= {n}, got {k}")
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    norms = np.linalg.norm(points, axis=1, keepdims=True)
    unit = np.divide(points, norms, out=np.zeros_like(points, dtype=np.float64), where=norms > 0)

    rng = stream(seed, "fusion/kmeans++")
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = unit[int(rng.integers(n))]
    dist = 1.0 - unit @ centers[0]
    for c in range(1, k):
        weights = np.maximum(dist, 0.0) ** 2
        total = weights.sum()
        if total <= 0:
            # all points coincide with chosen centers; reuse the first row
            centers[c] = unit[0]
        else:
            idx = int(rng.choice(n, p=weights / total))
            centers[c] = unit[idx]
        dist = np.minimum(dist, 1.0 - unit @ centers[c])

    labels = np.full(n, -1, dtype=np.int64)
    for _iteration in range(max_iter):
        cn = np.linalg.norm(centers, axis=1, keepdims=True)
        cu = np.divide(centers, cn, out=np.zeros_like(centers), where=cn > 0)
        new_labels = np.argmin(1.0 - unit @ cu.T, axis=1)  # argmin takes the lowest index on ties
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = unit[members].mean(axis=0)
    return labels


def aggregate_multicluster(h: Tensor, k: int, tau, seed: int) -> Tensor:
    """Partition rows by seeded cosine k-means, aggregate within each cluster,
    and return the mean of the per-cluster global embeddings.

    With k=1 this reduces bit-exactly to `aggregate_global(h, tau).global_emb`.
    Clusters emptied during iteration are dropped from the mean.
    """
    if h.ndim != 2:
        raise ShapeError(f"aggregate_multicluster: expected 2-D, got {h.shape}")
    length, dim = h.shape
    if not 1 <= k <= length:
        raise ParameterError(f"aggregate_multicluster: need 1 <= k <= {length}, got {k}")
    labels = kmeans_cosine(h.data.astype(np.float64), k, seed)
    cluster_embs = []
    for c in range(k):
        members = np.nonzero(labels == c)[0]
        if members.size == 0:
            continue
        select = np.zeros((members.size, length), dtype=h.data.dtype)
        select[np.arange(members.size), members] = 1.0
        rows = T.matmul(Tensor(select), h)
        cluster_embs.append(aggregate_global(rows, tau).global_emb)
    return T.mean_axis(T.stack_rows(cluster_embs), 0)


def region_stream(
    patch_embs: np.ndarray,
    text_global: np.ndarray,
    region_set: "regions_mod.RegionSet | None",
) -> np.ndarray:
    """The teacher's weighted region rows for one sample.

    Regions pair 1:1 with patch rows by original index (region i was cropped
    from patch i); the R_MAX most confident survive and their rows are
    penalty-weighted against the caption embedding. An empty or unusable
    region set falls back to the unweighted patch grid with a warning. The
    result is a plain array: every input here is frozen.
    """
    patch_count = patch_embs.shape[0]
    if patch_count < 1:
        raise ShapeError("region_stream: need at least one patch embedding")

    kept: list[int] = []
    if region_set is not None and region_set.regions:
        ranked = sorted(
            range(len(region_set.regions)),
            key=lambda i: (-region_set.regions[i].confidence, i),
        )
        kept = sorted(i for i in ranked[: regions_mod.R_MAX] if i < patch_count)

    if not kept:
        image_id = region_set.image_id if region_set is not None else "<unknown>"
        warnings.warn(
            f"no usable regions for {image_id}; using unweighted patch grid",
            RuntimeWarning,
            stacklevel=2,
        )
        return patch_embs.copy()

    subset = regions_mod.RegionSet(
        image_id=region_set.image_id, regions=[region_set.regions[i] for i in kept]
    )
    rows = patch_embs[kept]
    weights = regions_mod.penalty_weights(subset, rows, text_global)
    positive = weights > 0
    if positive.any():
        # zero-weight regions contradict the caption; drop them outright
        rows = rows[positive]
        weights = weights[positive]
    return regions_mod.apply_region_weights(Tensor(rows), weights).data


def fuse_and_aggregate(
    text_feats: Tensor,
    region_rows: Tensor,
    params: FusionParams,
    clusters: int = 1,
    seed: int = 0,
) -> Tensor:
    """Bidirectional fusion followed by aggregation of the attended region
    stream (into `clusters` k-means clusters when more than one and enough
    rows exist). Differentiable with respect to `params`. Not normalized."""
    _, region_ctx = bidirectional_fuse(text_feats, region_rows, params)
    if clusters > 1 and region_ctx.shape[0] >= clusters:
        return aggregate_multicluster(region_ctx, clusters, params.agg_tau, seed)
    return aggregate_global(region_ctx, params.agg_tau).global_emb


def teacher_forward(
    patch_embs: np.ndarray,
    text_feats: np.ndarray,
    text_global: np.ndarray,
    region_set: "regions_mod.RegionSet | None",
    params: FusionParams,
    clusters: int = 1,
    seed: int = 0,
) -> tuple[Tensor, Tensor]:
    """Produce the teacher's (image global, text global) pair for one sample.

    The image side is the weighted region stream fused with the caption
    tokens and aggregated, unit-normalized; the text side bypasses fusion and
    is returned exactly as given. Encoder outputs arrive as plain arrays
    because they are frozen here; gradients flow only into `params`.
    """
    rows = region_stream(patch_embs, text_global, region_set)
    agg = fuse_and_aggregate(Tensor(text_feats), Tensor(rows), params, clusters=clusters, seed=seed)
    return T.l2_normalize(agg), Tensor(text_global)
