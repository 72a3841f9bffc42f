"""Optimization, training loops, checkpoints, and the epoch sweep.

The teacher loop fine-tunes only the fusion parameters (plus its two
temperatures) against InfoNCE over frozen encoder outputs; the student loop
adapts only the image encoder against the composite distillation loss with
the teacher frozen. Both are bit-deterministic given (dataset files, config,
seed): batch order comes from per-epoch named streams and every op executes
in a fixed order.

Checkpoints (magic "DCKP") carry a length-prefixed JSON header (variant,
config snapshot, stream bookkeeping, step counter) followed by named float32
tensors; save -> load -> save is byte-identical. Per-step loss components
stream to train_log.csv and per-epoch validation to val_log.csv.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import HELDOUT_FILE, REGIONS_FILE, TRAIN_FILE, Sample, load_samples
from .encoders import EncoderConfig, ImageEncoder, TextEncoder, build_encoder_pair
from .exceptions import ConfigError, InputError, NumericError, ParameterError, ParseError
from .fusion import TAU_INIT, TAU_MAX, TAU_MIN, FusionParams, fuse_and_aggregate, region_stream
from .losses import info_nce, student_loss
from .regions import RegionSet, load_regions
from .rng import stream
from .tensor import GradTape, Tensor

CKPT_MAGIC = b"DCKP"
CKPT_VERSION = 1

STEP_LOG_HEADER = "epoch,step,total,contrastive,cos_T,cos_I,anchor,tau_loss,tau_agg"
VAL_LOG_HEADER = "epoch,total,contrastive,cos_T,cos_I,anchor"
SWEEP_HEADER = "epoch,t2i_r1,retention"


@dataclass
class TrainConfig:
    """Run settings; the b/l presets mirror the reference hyperparameter table."""

    variant: str = "b"
    teacher_epochs: int = 5
    student_epochs: int = 2
    teacher_lr: float = 1e-5
    student_lr: float = 1e-6
    batch_size: int = 32
    clusters: int = 1
    position_mode: str = "absolute"
    anchor_enabled: bool = False
    anchor_weight: float = 1.0
    embed_dim: int = 512
    num_heads: int = 8
    seed: int = 0
    grad_clip: float | None = None  # global-norm clip, off by default

    @staticmethod
    def preset(variant: str, seed: int = 0, **overrides) -> "TrainConfig":
        variant = variant.lower()
        if variant == "b":
            base = TrainConfig(variant="b", seed=seed)
        elif variant == "l":
            base = TrainConfig(
                variant="l",
                teacher_epochs=1,
                clusters=3,
                position_mode="rotary",
                anchor_enabled=True,
                embed_dim=768,
                num_heads=12,
                seed=seed,
            )
        else:
            raise ConfigError(f"unknown variant {variant!r} (expected 'b' or 'l')")
        for key, value in overrides.items():
            if not hasattr(base, key):
                raise ConfigError(f"unknown config field {key!r}")
            setattr(base, key, value)
        return base

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            embed_dim=self.embed_dim,
            num_heads=self.num_heads,
            position_mode=self.position_mode,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)


# --------------------------------------------------------------------------
# Optimizer


class Adam:
    """Standard Adam with bias correction over a named parameter dict.

    A non-finite gradient aborts the step before any parameter or moment is
    touched. Updates run in a fixed name order for reproducibility.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        grad_clip: float | None = None,
    ):
        if lr < 0:
            raise ParameterError(f"learning rate must be >= 0, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.grad_clip = grad_clip
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.t = 0

    def step(self) -> None:
        grads: dict[str, np.ndarray] = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name!r}; step aborted")
            grads[name] = g
        if self.grad_clip is not None:
            total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
            if total > self.grad_clip:
                ratio = self.grad_clip / total
                grads = {name: g * ratio for name, g in grads.items()}

        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None


# --------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write a DCKP file atomically; non-finite tensors never reach disk."""
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks = [CKPT_MAGIC, struct.pack("<H", CKPT_VERSION), struct.pack("<I", len(header)), header]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)  # 0-d arrays are contiguous already; keep their shape
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in tensor {name!r}; checkpoint not written")
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            chunks.append(struct.pack("<I", dim))
        chunks.append(arr.astype("<f4", copy=False).tobytes(order="C"))
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != CKPT_MAGIC:
        raise ParseError(f"bad magic {blob[:4]!r}, expected {CKPT_MAGIC!r}", offset=0)
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != CKPT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", offset=4)
    (header_len,) = struct.unpack_from("<I", blob, 6)
    pos = 10
    if len(blob) < pos + header_len:
        raise ParseError("truncated header", offset=len(blob))
    meta = json.loads(blob[pos : pos + header_len].decode("utf-8"))
    pos += header_len

    tensors: dict[str, np.ndarray] = {}
    while pos < len(blob):
        if pos + 2 > len(blob):
            raise ParseError("truncated tensor name length", offset=pos)
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        if pos + 1 > len(blob):
            raise ParseError(f"truncated rank for {name!r}", offset=pos)
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        dims = []
        for _ in range(rank):
            (dim,) = struct.unpack_from("<I", blob, pos)
            dims.append(dim)
            pos += 4
        n_items = int(np.prod(dims)) if dims else 1
        nbytes = n_items * 4
        if pos + nbytes > len(blob):
            raise ParseError(f"truncated payload for {name!r}", offset=pos)
        arr = np.frombuffer(blob, dtype="<f4", count=n_items, offset=pos).reshape(dims)
        tensors[name] = arr.astype(np.float32, copy=True)
        pos += nbytes
    return meta, tensors


def params_digest(tensors: dict[str, Tensor] | dict[str, np.ndarray]) -> str:
    """SHA-256 over named tensor bytes; the frozen-parameter witness."""
    h = hashlib.sha256()
    for name in sorted(tensors):
        value = tensors[name]
        arr = value.data if isinstance(value, Tensor) else value
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# Logs


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class TrainLog:
    """Per-step rows plus per-epoch validation rows, strictly ordered."""

    step_rows: list[tuple] = field(default_factory=list)
    val_rows: list[tuple] = field(default_factory=list)

    def log_step(self, epoch, step, total, contrastive, cos_t, cos_i, anchor, tau_loss, tau_agg):
        self.step_rows.append((epoch, step, total, contrastive, cos_t, cos_i, anchor, tau_loss, tau_agg))

    def log_validation(self, epoch, total, contrastive, cos_t, cos_i, anchor):
        self.val_rows.append((epoch, total, contrastive, cos_t, cos_i, anchor))

    def validation_totals(self) -> list[float]:
        return [row[1] for row in self.val_rows]

    def write(self, out_dir, prefix: str = "train") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        step_path = out / f"{prefix}_log.csv"
        with open(step_path, "w", encoding="utf-8") as fh:
            fh.write(STEP_LOG_HEADER + "\n")
            for row in self.step_rows:
                fh.write(f"{row[0]},{row[1]}," + ",".join(_fmt(v) for v in row[2:]) + "\n")
        val_path = out / f"{prefix}_val_log.csv"
        with open(val_path, "w", encoding="utf-8") as fh:
            fh.write(VAL_LOG_HEADER + "\n")
            for row in self.val_rows:
                fh.write(f"{row[0]}," + ",".join(_fmt(v) for v in row[1:]) + "\n")
        return step_path, val_path


# --------------------------------------------------------------------------
# Data preparation


@dataclass
class EncodedSample:
    """A sample plus every frozen encoding the loops need, computed once."""

    id: str
    class_label: int
    parts: np.ndarray  # [P, raw]
    crop_embs: np.ndarray  # [P, d], each part separately full-encoded (the region "crops")
    text_feats: np.ndarray  # [T, d], frozen token features
    text_global: np.ndarray  # [d], frozen unit embedding
    region_rows: np.ndarray  # [R, d], weighted region stream for the teacher
    base_global: np.ndarray  # [d], frozen base image embedding (student init / anchor)


@dataclass
class PreparedData:
    train: list[EncodedSample]
    val: list[EncodedSample]
    heldout: list[EncodedSample]
    text_enc: TextEncoder
    base_image_enc: ImageEncoder
    config: TrainConfig


def _encode_sample(
    sample: Sample,
    region_set: RegionSet | None,
    text_enc: TextEncoder,
    image_enc: ImageEncoder,
) -> EncodedSample:
    # each region crop is encoded separately by the full frozen image encoder,
    # landing in the same embedding space as captions and global images
    crop_embs = np.stack(
        [image_enc.encode_global(sample.parts[i : i + 1]).data for i in range(sample.parts.shape[0])]
    )
    text_global, text_feats = text_enc.encode(sample.tokens)
    rows = region_stream(crop_embs, text_global.data, region_set)
    base_global = image_enc.encode_global(sample.parts).data
    return EncodedSample(
        id=sample.id,
        class_label=sample.class_label,
        parts=sample.parts,
        crop_embs=crop_embs,
        text_feats=text_feats.data,
        text_global=text_global.data,
        region_rows=rows,
        base_global=base_global,
    )


def prepare_data(data_dir, config: TrainConfig) -> PreparedData:
    """Load a dataset directory, split validation, and precompute all frozen
    encodings. The validation split is the last 10% of the training file and
    is never shuffled into training."""
    data_dir = Path(data_dir)
    train_samples = load_samples(data_dir / TRAIN_FILE)
    if not train_samples:
        raise InputError(f"empty dataset: {data_dir / TRAIN_FILE}")
    heldout_samples = load_samples(data_dir / HELDOUT_FILE) if (data_dir / HELDOUT_FILE).exists() else []
    region_sets = {rs.image_id: rs for rs in load_regions(data_dir / REGIONS_FILE)}

    text_enc, image_enc = build_encoder_pair(config.encoder_config())

    def encode_all(samples: list[Sample]) -> list[EncodedSample]:
        return [_encode_sample(s, region_sets.get(s.id), text_enc, image_enc) for s in samples]

    n_val = max(2, len(train_samples) // 10)
    if len(train_samples) <= n_val:
        raise InputError(f"dataset too small to hold out a validation split ({len(train_samples)} samples)")
    train = encode_all(train_samples[:-n_val])
    val = encode_all(train_samples[-n_val:])
    if len(train) < config.batch_size:
        raise InputError(
            f"need at least batch_size={config.batch_size} training pairs, got {len(train)}"
        )
    heldout = encode_all(heldout_samples)
    return PreparedData(
        train=train, val=val, heldout=heldout, text_enc=text_enc, base_image_enc=image_enc, config=config
    )


def _batches(n: int, batch_size: int, order: np.ndarray | None = None) -> list[np.ndarray]:
    idx = order if order is not None else np.arange(n)
    out = [idx[i : i + batch_size] for i in range(0, n, batch_size)]
    if out and len(out[-1]) < 2:
        out.pop()  # the contrastive loss needs negatives
    return out


def _clamp_tau(t: Tensor) -> None:
    np.clip(t.data, TAU_MIN, TAU_MAX, out=t.data)


# --------------------------------------------------------------------------
# Teacher


class TeacherTrainer:
    """Fine-tunes the fusion parameters; everything else is frozen."""

    def __init__(self, prepared: PreparedData, config: TrainConfig):
        self.prepared = prepared
        self.config = config
        self.fusion = FusionParams.create(config.embed_dim, config.num_heads, config.seed)
        self.fusion.set_trainable(True)
        self.loss_tau = Tensor(np.asarray(TAU_INIT, dtype=np.float32), requires_grad=True)
        params = dict(self.fusion.parameters())
        params["loss_tau"] = self.loss_tau
        self.adam = Adam(params, lr=config.teacher_lr, grad_clip=config.grad_clip)
        self.log = TrainLog()
        self.epochs_done = 0
        self.global_step = 0
        self._log_validation()  # epoch-0 baseline

    # -- forward pieces

    def _teacher_image_embedding(self, sample: EncodedSample) -> Tensor:
        z = fuse_and_aggregate(
            Tensor(sample.text_feats),
            Tensor(sample.region_rows),
            self.fusion,
            clusters=self.config.clusters,
            seed=self.config.seed,
        )
        return T.l2_normalize(z)

    def _batch_loss(self, samples: list[EncodedSample]) -> Tensor:
        image_rows = T.stack_rows([self._teacher_image_embedding(s) for s in samples])
        text_rows = Tensor(np.stack([s.text_global for s in samples]))
        return info_nce(image_rows, text_rows, self.loss_tau)

    def validation_loss(self) -> float:
        total, count = 0.0, 0
        for batch in _batches(len(self.prepared.val), self.config.batch_size):
            samples = [self.prepared.val[i] for i in batch]
            loss = self._batch_loss(samples)
            total += float(loss.data) * len(samples)
            count += len(samples)
        return total / count

    def _log_validation(self) -> None:
        val = self.validation_loss()
        self.log.log_validation(self.epochs_done, val, val, 0.0, 0.0, 0.0)

    # -- training

    def run_epoch(self) -> None:
        epoch = self.epochs_done + 1
        order = stream(self.config.seed, f"teacher/shuffle/{epoch}").permutation(len(self.prepared.train))
        for batch in _batches(len(self.prepared.train), self.config.batch_size, order):
            samples = [self.prepared.train[i] for i in batch]
            with GradTape() as tape:
                loss = self._batch_loss(samples)
                tape.backward(loss)
            self.adam.step()
            self.adam.zero_grads()
            _clamp_tau(self.fusion.agg_tau)
            _clamp_tau(self.loss_tau)
            self.global_step += 1
            self.log.log_step(
                epoch, self.global_step, float(loss.data), float(loss.data), 0.0, 0.0, 0.0,
                float(self.loss_tau.data), float(self.fusion.agg_tau.data),
            )
        self.epochs_done = epoch
        self._log_validation()

    def train(self, epochs: int, checkpoint_path=None) -> None:
        for _ in range(epochs):
            self.run_epoch()
            if checkpoint_path is not None:
                self.save(checkpoint_path)

    # -- persistence

    def checkpoint_tensors(self) -> dict[str, np.ndarray]:
        out = {f"fusion.{name}": p.data for name, p in self.fusion.parameters().items()}
        out["loss_tau"] = self.loss_tau.data
        return out

    def checkpoint_meta(self) -> dict:
        return {
            "kind": "teacher",
            "variant": self.config.variant,
            "config": self.config.to_dict(),
            "rng": {"seed": self.config.seed, "teacher_epochs_done": self.epochs_done},
            "step": self.global_step,
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.checkpoint_meta(), self.checkpoint_tensors())


def train_teacher(data_dir, config: TrainConfig, out_dir=None) -> tuple[TeacherTrainer, TrainLog]:
    """Run the configured number of teacher epochs over a dataset directory."""
    prepared = prepare_data(data_dir, config)
    trainer = TeacherTrainer(prepared, config)
    ckpt = Path(out_dir) / "teacher.dckp" if out_dir is not None else None
    if ckpt is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        trainer.save(ckpt)  # epoch-0 state, so an aborted first epoch still leaves a valid file
    trainer.train(config.teacher_epochs, checkpoint_path=ckpt)
    if out_dir is not None:
        trainer.log.write(out_dir, prefix="teacher")
    return trainer, trainer.log


def load_teacher(path, config: TrainConfig) -> tuple[FusionParams, Tensor, dict]:
    """Restore frozen fusion parameters from a teacher checkpoint."""
    meta, tensors = load_checkpoint(path)
    if meta.get("kind") != "teacher":
        raise ConfigError(f"{path} is not a teacher checkpoint")
    if meta.get("variant") != config.variant:
        raise ConfigError(
            f"checkpoint variant {meta.get('variant')!r} does not match config variant {config.variant!r}"
        )
    fusion = FusionParams.create(config.embed_dim, config.num_heads, config.seed)
    for name, p in fusion.parameters().items():
        key = f"fusion.{name}"
        if key not in tensors:
            raise ConfigError(f"checkpoint missing tensor {key!r}")
        if tensors[key].shape != p.data.shape:
            raise ConfigError(f"checkpoint tensor {key!r} has shape {tensors[key].shape}, expected {p.data.shape}")
        p.data = tensors[key].copy()
    fusion.set_trainable(False)
    loss_tau = Tensor(tensors["loss_tau"].copy())
    return fusion, loss_tau, meta


# --------------------------------------------------------------------------
# Student


class StudentTrainer:
    """Distills the frozen teacher into a trainable copy of the image encoder."""

    def __init__(self, prepared: PreparedData, fusion: FusionParams, config: TrainConfig):
        self.prepared = prepared
        self.config = config
        self.fusion = fusion
        self.fusion.set_trainable(False)
        self.student = prepared.base_image_enc.copy(trainable=True)
        self.loss_tau = Tensor(np.asarray(TAU_INIT, dtype=np.float32), requires_grad=True)
        params = {f"student.{name}": p for name, p in self.student.parameters().items()}
        params["loss_tau"] = self.loss_tau
        self.adam = Adam(params, lr=config.student_lr, grad_clip=config.grad_clip)
        self.log = TrainLog()
        self.epochs_done = 0
        self.global_step = 0
        self._teacher_cache: dict[str, np.ndarray] = {}
        self._log_validation()

    def refresh_teacher_targets(self) -> None:
        """Drop cached teacher outputs after the teacher has been trained further."""
        self._teacher_cache.clear()

    def _teacher_target(self, sample: EncodedSample) -> np.ndarray:
        cached = self._teacher_cache.get(sample.id)
        if cached is None:
            z = fuse_and_aggregate(
                Tensor(sample.text_feats),
                Tensor(sample.region_rows),
                self.fusion,
                clusters=self.config.clusters,
                seed=self.config.seed,
            )
            cached = T.l2_normalize(z).data
            self._teacher_cache[sample.id] = cached
        return cached

    def _student_image_embedding(self, sample: EncodedSample) -> Tensor:
        return self.student.encode_global(sample.parts)

    def _batch_loss(self, samples: list[EncodedSample]):
        student_img = T.stack_rows([self._student_image_embedding(s) for s in samples])
        text_rows = np.stack([s.text_global for s in samples])
        teacher_img = Tensor(np.stack([self._teacher_target(s) for s in samples]))
        anchor = Tensor(np.stack([s.base_global for s in samples])) if self.config.anchor_enabled else None
        return student_loss(
            student_img,
            Tensor(text_rows),
            teacher_img,
            Tensor(text_rows),
            self.loss_tau,
            anchor_img=anchor,
            anchor_weight=self.config.anchor_weight,
        )

    def validation_components(self) -> dict[str, float]:
        sums = {"total": 0.0, "contrastive": 0.0, "cos_T": 0.0, "cos_I": 0.0, "anchor": 0.0}
        count = 0
        for batch in _batches(len(self.prepared.val), self.config.batch_size):
            samples = [self.prepared.val[i] for i in batch]
            value = self._batch_loss(samples)
            sums["total"] += float(value.total.data) * len(samples)
            for key in ("contrastive", "cos_T", "cos_I", "anchor"):
                sums[key] += value.components[key] * len(samples)
            count += len(samples)
        return {key: v / count for key, v in sums.items()}

    def _log_validation(self) -> None:
        c = self.validation_components()
        self.log.log_validation(
            self.epochs_done, c["total"], c["contrastive"], c["cos_T"], c["cos_I"], c["anchor"]
        )

    def run_epoch(self) -> None:
        epoch = self.epochs_done + 1
        order = stream(self.config.seed, f"student/shuffle/{epoch}").permutation(len(self.prepared.train))
        for batch in _batches(len(self.prepared.train), self.config.batch_size, order):
            samples = [self.prepared.train[i] for i in batch]
            with GradTape() as tape:
                value = self._batch_loss(samples)
                tape.backward(value.total)
            self.adam.step()
            self.adam.zero_grads()
            _clamp_tau(self.loss_tau)
            self.global_step += 1
            c = value.components
            self.log.log_step(
                epoch, self.global_step, float(value.total.data), c["contrastive"], c["cos_T"],
                c["cos_I"], c["anchor"], float(self.loss_tau.data), float(self.fusion.agg_tau.data),
            )
        self.epochs_done = epoch
        self._log_validation()

    def train(self, epochs: int, checkpoint_path=None) -> None:
        for _ in range(epochs):
            self.run_epoch()
            if checkpoint_path is not None:
                self.save(checkpoint_path)

    # -- evaluation hooks

    def heldout_image_embeddings(self) -> np.ndarray:
        return np.stack([self._student_image_embedding(s).data for s in self.prepared.heldout])

    def checkpoint_tensors(self) -> dict[str, np.ndarray]:
        out = {f"student.{name}": p.data for name, p in self.student.parameters().items()}
        out["loss_tau"] = self.loss_tau.data
        return out

    def checkpoint_meta(self) -> dict:
        return {
            "kind": "student",
            "variant": self.config.variant,
            "config": self.config.to_dict(),
            "rng": {"seed": self.config.seed, "student_epochs_done": self.epochs_done},
            "step": self.global_step,
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.checkpoint_meta(), self.checkpoint_tensors())


def distill_student(
    data_dir, teacher_ckpt, config: TrainConfig, out_dir=None, prepared: PreparedData | None = None
) -> tuple[StudentTrainer, TrainLog]:
    """Distill a fresh student against a trained (now frozen) teacher.

    `teacher_ckpt` may be a checkpoint path or an in-memory FusionParams.
    """
    if prepared is None:
        prepared = prepare_data(data_dir, config)
    if isinstance(teacher_ckpt, FusionParams):
        fusion = teacher_ckpt
    else:
        fusion, _, _ = load_teacher(teacher_ckpt, config)
    trainer = StudentTrainer(prepared, fusion, config)
    ckpt = Path(out_dir) / "student.dckp" if out_dir is not None else None
    if ckpt is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        trainer.save(ckpt)
    trainer.train(config.student_epochs, checkpoint_path=ckpt)
    if out_dir is not None:
        trainer.log.write(out_dir, prefix="student")
    return trainer, trainer.log


# --------------------------------------------------------------------------
# Epoch sweep


def retention_proxy(student_rows: np.ndarray, base_rows: np.ndarray) -> float:
    """Mean cosine between student and frozen-base image embeddings.

    Bitwise-identical rows contribute exactly 1.0, so an undistilled student
    scores exactly 1.0 against its own base.
    """
    total = 0.0
    for a, b in zip(student_rows, base_rows):
        if np.array_equal(a, b):
            total += 1.0
        else:
            total += float(a @ b) / (float(np.linalg.norm(a)) * float(np.linalg.norm(b)))
    return total / len(student_rows)


def _t2i_recall_at_1(text_rows: np.ndarray, image_rows: np.ndarray, ids: list[str]) -> float:
    from .evaluation import cosine_similarity_matrix, recall_at_k

    text_ids = [f"text:{i}" for i in ids]
    image_ids = [f"image:{i}" for i in ids]
    sim = cosine_similarity_matrix(text_rows, image_rows, text_ids, image_ids)
    return recall_at_k(sim, 1, dict(zip(text_ids, image_ids)))


def epoch_sweep(data_dir, config: TrainConfig, max_epochs: int) -> list[tuple[int, float, float]]:
    """Train teacher and student side by side across epochs to expose the
    retrieval-vs-retention trade-off.

    One ongoing run: each row adds one teacher epoch, refreshes the cached
    teacher targets, continues distilling the same student for
    `student_epochs` more epochs, and evaluates on heldout data. Row 0 is the
    undistilled baseline (retention exactly 1.0); rows run 0..max_epochs-1.
    """
    if max_epochs < 1:
        raise ParameterError(f"max_epochs must be >= 1, got {max_epochs}")
    prepared = prepare_data(data_dir, config)
    if not prepared.heldout:
        raise InputError("epoch_sweep needs a heldout split")

    ids = [s.id for s in prepared.heldout]
    text_rows = np.stack([s.text_global for s in prepared.heldout])
    base_rows = np.stack([s.base_global for s in prepared.heldout])

    rows = [(0, _t2i_recall_at_1(text_rows, base_rows, ids), retention_proxy(base_rows, base_rows))]
    teacher = TeacherTrainer(prepared, config)
    student = StudentTrainer(prepared, teacher.fusion, config)
    for epoch in range(1, max_epochs):
        teacher.fusion.set_trainable(True)
        teacher.run_epoch()
        teacher.fusion.set_trainable(False)
        student.refresh_teacher_targets()
        student.train(config.student_epochs)
        student_rows = student.heldout_image_embeddings()
        rows.append(
            (epoch, _t2i_recall_at_1(text_rows, student_rows, ids), retention_proxy(student_rows, base_rows))
        )
    return rows


def write_sweep_csv(path, rows: list[tuple[int, float, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for epoch, r1, retention in rows:
            fh.write(f"{epoch},{_fmt(r1)},{_fmt(retention)}\n")
