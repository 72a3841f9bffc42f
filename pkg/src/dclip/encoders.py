"""Deterministic mock image/text encoder pair plus the trainable student.

These stand in for a pretrained contrastive vision-language checkpoint at toy
scale. Real checkpoints arrive with the two towers already aligned; the mocks
reproduce that by construction: every token id has a fixed unit "anchor"
vector in raw-patch space, the text embedding table is the image patch
projection applied to those anchors (plus tower-specific noise), and both
towers share the same output-projection draw. Matched image/caption pairs
therefore land measurably closer than mismatched ones, which is what gives
retrieval training its signal.

The text encoder is always frozen. The image encoder doubles as the teacher's
patch encoder (frozen) and, copied with the trainable flag set, as the
student. Positions: the text tower adds a sine table (zero at position 0) in
absolute mode; in rotary mode both towers rotate queries/keys inside
attention only, so patch order carries no signal outside attention and
single-row inputs agree bit-for-bit across modes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import tensor as T
from .exceptions import InputError, ParameterError
from .fusion import AttentionBlock, cross_attend
from .rng import stream, uniform_init
from .tensor import Tensor

DEFAULT_VOCAB = 256
DEFAULT_RAW_DIM = 32

_TOKEN_NOISE = 0.05  # tower-specific perturbation of the shared anchors
_PE_SCALE = 0.05  # keep the position table well below token magnitude
_BLOCK_GAIN = 0.3  # shrink value/output projections so the residual dominates


@lru_cache(maxsize=8)
def token_anchors(vocab_size: int = DEFAULT_VOCAB, raw_dim: int = DEFAULT_RAW_DIM) -> np.ndarray:
    """Universal unit anchor vector per token id, shared by data generation
    and encoder construction. Fixed derivation, independent of user seeds."""
    g = stream(0, "mock/token-anchors/v1")
    m = g.normal(size=(vocab_size, raw_dim))
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    out = m.astype(np.float32)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class EncoderConfig:
    """Shape and seeding of one encoder pair."""

    embed_dim: int = 512
    num_heads: int = 8
    token_cap: int = 77
    position_mode: str = "absolute"  # or "rotary"
    seed: int = 0
    vocab_size: int = DEFAULT_VOCAB
    raw_dim: int = DEFAULT_RAW_DIM

    def __post_init__(self):
        if self.embed_dim <= 0 or self.num_heads <= 0 or self.embed_dim % self.num_heads:
            raise ParameterError(
                f"embed_dim {self.embed_dim} must be positive and divisible by num_heads {self.num_heads}"
            )
        if self.position_mode not in ("absolute", "rotary"):
            raise ParameterError(f"unknown position_mode {self.position_mode!r}")
        if self.position_mode == "rotary" and (self.embed_dim // self.num_heads) % 2:
            raise ParameterError("rotary mode needs an even head dimension")
        if self.token_cap < 1:
            raise ParameterError(f"token_cap {self.token_cap} must be positive")

    @staticmethod
    def variant_b(seed: int = 0) -> "EncoderConfig":
        return EncoderConfig(embed_dim=512, num_heads=8, position_mode="absolute", seed=seed)

    @staticmethod
    def variant_l(seed: int = 0) -> "EncoderConfig":
        return EncoderConfig(embed_dim=768, num_heads=12, position_mode="rotary", seed=seed)


def _sine_positions(max_len: int, dim: int) -> np.ndarray:
    # sin-only table: position 0 contributes exactly nothing
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(dim, dtype=np.float64) / dim)
    return (_PE_SCALE * np.sin(pos * freq)).astype(np.float32)


@dataclass
class TextEncoder:
    """Frozen caption encoder: embedding table, one attention block, projection."""

    config: EncoderConfig
    token_table: Tensor
    block: AttentionBlock
    proj: Tensor
    pe_table: np.ndarray

    def parameters(self) -> dict[str, Tensor]:
        out = {"token_table": self.token_table}
        for name, p in self.block.parameters().items():
            out[f"block.{name}"] = p
        out["proj"] = self.proj
        return out

    def encode(self, tokens) -> tuple[Tensor, Tensor]:
        """Return (unit global embedding, per-token features).

        Deterministic in (tokens, seed); sequences beyond the cap are
        truncated with a warning.
        """
        tokens = list(tokens)
        if not tokens:
            raise InputError("encode: empty token sequence")
        for t in tokens:
            if not 0 <= int(t) < self.config.vocab_size:
                raise InputError(f"encode: token id {t} outside vocab of {self.config.vocab_size}")
        if len(tokens) > self.config.token_cap:
            warnings.warn(
                f"caption of {len(tokens)} tokens truncated to {self.config.token_cap}",
                RuntimeWarning,
                stacklevel=2,
            )
            tokens = tokens[: self.config.token_cap]
        ids = np.asarray(tokens, dtype=np.int64)

        x_data = self.token_table.data[ids]
        rotary = self.config.position_mode == "rotary"
        if not rotary:
            x_data = x_data + self.pe_table[: len(ids)]
        x = Tensor(x_data)
        positions = np.arange(len(ids)) if rotary else None
        feats = cross_attend(x, x, self.block, q_positions=positions, kv_positions=positions)
        pooled = T.mean_axis(feats, 0)
        d = self.config.embed_dim
        global_vec = T.reshape(T.matmul(T.reshape(pooled, (1, d)), self.proj), (d,))
        return T.l2_normalize(global_vec), feats


@dataclass
class ImageEncoder:
    """Patch projection, one self-attention block, and an attention-pooling head.

    With `trainable` unset, a training step leaves every parameter
    bit-identical (nothing is handed to the optimizer and nothing records on
    the tape).
    """

    config: EncoderConfig
    patch_proj: Tensor
    block: AttentionBlock
    pool_query: Tensor
    pool_proj: Tensor
    trainable: bool = field(default=False)

    def parameters(self) -> dict[str, Tensor]:
        out = {"patch_proj": self.patch_proj}
        for name, p in self.block.parameters().items():
            out[f"block.{name}"] = p
        out["pool_query"] = self.pool_query
        out["pool_proj"] = self.pool_proj
        return out

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        for p in self.parameters().values():
            p.requires_grad = flag

    def copy(self, trainable: bool = False) -> "ImageEncoder":
        dup = ImageEncoder(
            config=self.config,
            patch_proj=self.patch_proj.copy(),
            block=self.block.copy(),
            pool_query=self.pool_query.copy(),
            pool_proj=self.pool_proj.copy(),
        )
        dup.set_trainable(trainable)
        return dup

    def encode_patches(self, raw_patches) -> Tensor:
        """Per-patch embeddings: a pure row-wise projection, order-preserving."""
        x = raw_patches if isinstance(raw_patches, Tensor) else Tensor(raw_patches)
        if x.ndim != 2 or x.shape[0] < 1:
            raise InputError(f"encode_patches: expected non-empty P x {self.config.raw_dim}, got {x.shape}")
        if x.shape[1] != self.config.raw_dim:
            raise InputError(f"encode_patches: raw dim {x.shape[1]} != {self.config.raw_dim}")
        return T.matmul(x, self.patch_proj)

    def pool_global(self, patch_embs: Tensor) -> Tensor:
        """Attention-pooled global embedding of a patch set (not normalized)."""
        if patch_embs.ndim != 2 or patch_embs.shape[0] < 1:
            raise InputError(f"pool_global: expected non-empty 2-D, got {patch_embs.shape}")
        n, d = patch_embs.shape
        positions = np.arange(n) if self.config.position_mode == "rotary" else None
        feats = cross_attend(patch_embs, patch_embs, self.block, q_positions=positions, kv_positions=positions)
        scores = T.scale(T.matmul(feats, T.reshape(self.pool_query, (d, 1))), 1.0 / float(np.sqrt(d)))
        alpha = T.softmax(T.transpose(scores))  # [1, n]
        pooled = T.matmul(alpha, feats)
        return T.reshape(T.matmul(pooled, self.pool_proj), (d,))

    def encode_global(self, raw_patches) -> Tensor:
        """Patch projection + pooling in one call; unit-normalized."""
        return T.l2_normalize(self.pool_global(self.encode_patches(raw_patches)))


def build_encoder_pair(config: EncoderConfig) -> tuple[TextEncoder, ImageEncoder]:
    """Construct the aligned frozen (text, image) pair for a config.

    Same config -> same parameter bytes. The image encoder returned here is
    the frozen base; copy it with trainable=True to get a student.
    """
    seed, d = config.seed, config.embed_dim
    anchors = token_anchors(config.vocab_size, config.raw_dim)

    patch_proj = Tensor(uniform_init(seed, "image/patch_proj", (config.raw_dim, d), config.raw_dim))
    shared_out = uniform_init(seed, "shared/output_proj", (d, d), d)

    table = anchors @ patch_proj.data
    table = table + _TOKEN_NOISE * stream(seed, "text/token_noise").normal(size=table.shape).astype(np.float32)

    def damped_block(name: str) -> AttentionBlock:
        block = AttentionBlock.create(seed, name, d, config.num_heads)
        block.wv.data *= _BLOCK_GAIN
        block.wo.data *= _BLOCK_GAIN
        return block

    text_enc = TextEncoder(
        config=config,
        token_table=Tensor(table.astype(np.float32)),
        block=damped_block("text/block"),
        proj=Tensor(shared_out.copy()),
        pe_table=_sine_positions(config.token_cap, d),
    )
    image_enc = ImageEncoder(
        config=config,
        patch_proj=patch_proj,
        block=damped_block("image/block"),
        pool_query=Tensor(uniform_init(seed, "image/pool_query", (d,), d)),
        pool_proj=Tensor(shared_out.copy()),
    )
    return text_enc, image_enc


# Spec-surface wrappers around the methods above.


def encode_text(tokens, enc: TextEncoder) -> Tensor:
    return enc.encode(tokens)[0]


def encode_image_patches(raw_patches, enc: ImageEncoder) -> Tensor:
    return enc.encode_patches(raw_patches)


def pool_global(patch_embs: Tensor, enc: ImageEncoder) -> Tensor:
    return enc.pool_global(patch_embs)
