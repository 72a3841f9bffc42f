"""Synthetic datasets and the binary embedding cache.

Generation plants shared latent structure across modalities: each image's
raw "parts" are noisy copies of concept anchor vectors, its caption tokens
include the ids of those same concepts (plus filler), and its regions cover
the parts with salience-derived confidence. Matched pairs therefore carry a
recoverable cross-modal signal through the frozen mock encoders.

The embedding cache (magic "DCEC") is a little-endian binary matrix keyed by
sample id: u16 version, u32 dim, u32 count, a u32-length-prefixed block of
newline-joined UTF-8 ids, then the row-major float32 payload. Any producer
that writes this format (and the regions JSONL) is a drop-in data source.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .encoders import ImageEncoder, TextEncoder, token_anchors
from .exceptions import InputError, NumericError, ParseError, ValidationError
from .regions import Region, RegionSet, save_regions
from .rng import stream

CACHE_MAGIC = b"DCEC"
CACHE_VERSION = 1

TRAIN_FILE = "train.jsonl"
HELDOUT_FILE = "heldout.jsonl"
REGIONS_FILE = "regions.jsonl"
LABELS_FILE = "labels.csv"
SPEC_FILE = "spec.json"

PROMPT_TEMPLATE = "This is a photo of a {LABEL}"


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of the synthetic generator; defaults give seconds-fast epochs."""

    num_concepts: int = 16
    parts_per_image: int = 6
    caption_len: tuple[int, int] = (3, 8)
    noise_sigma: float = 0.1
    train_size: int = 512
    heldout_size: int = 128
    num_classes: int = 10
    seed: int = 0
    raw_dim: int = 32
    vocab_size: int = 256

    def __post_init__(self):
        if self.num_concepts < 1 or self.num_concepts > self.vocab_size:
            raise ValidationError("num_concepts must fit in the vocab", field="num_concepts")
        if self.caption_len[0] < 1 or self.caption_len[0] > self.caption_len[1]:
            raise ValidationError("caption_len range invalid", field="caption_len")
        if self.parts_per_image < 1:
            raise ValidationError("parts_per_image must be positive", field="parts_per_image")
        if self.num_classes < 1:
            raise ValidationError("num_classes must be positive", field="num_classes")


@dataclass
class Sample:
    """One image-caption pair: raw parts, caption token ids, class label."""

    id: str
    parts: np.ndarray  # [P, raw_dim] float32
    tokens: list[int]
    class_label: int


def tokenize(text: str, vocab_size: int = 256) -> list[int]:
    """Hash each whitespace word to a stable token id."""
    out = []
    for word in text.split():
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        out.append(int.from_bytes(digest[:8], "little") % vocab_size)
    return out


def class_prompt_tokens(num_classes: int, vocab_size: int = 256) -> list[list[int]]:
    """Fixed token sequence per class, from the standard photo-prompt template."""
    return [
        tokenize(PROMPT_TEMPLATE.replace("{LABEL}", f"class{c}"), vocab_size)
        for c in range(num_classes)
    ]


# --------------------------------------------------------------------------
# Generation


def _make_sample(spec: SyntheticSpec, split: str, index: int) -> tuple[Sample, RegionSet]:
    rng = stream(spec.seed, f"data/{split}/{index}")
    anchors = token_anchors(spec.vocab_size, spec.raw_dim)

    n_present = int(rng.integers(1, min(4, spec.num_concepts + 1)))
    present = rng.choice(spec.num_concepts, size=n_present, replace=False)

    parts = np.empty((spec.parts_per_image, spec.raw_dim), dtype=np.float32)
    regions: list[Region] = []
    salience_by_concept: dict[int, float] = {}
    for p in range(spec.parts_per_image):
        concept = int(present[int(rng.integers(n_present))])
        salience = float(rng.uniform(0.3, 1.0))
        noise = rng.standard_normal(spec.raw_dim)
        parts[p] = (anchors[concept].astype(np.float64) + spec.noise_sigma * noise).astype(np.float32)
        w = float(rng.uniform(0.15, 0.45))
        h = float(rng.uniform(0.15, 0.45))
        x = float(rng.uniform(0.0, 1.0 - w))
        y = float(rng.uniform(0.0, 1.0 - h))
        regions.append(Region(bbox=(x, y, w, h), confidence=salience, class_id=concept))
        salience_by_concept[concept] = salience_by_concept.get(concept, 0.0) + salience

    length = int(rng.integers(spec.caption_len[0], spec.caption_len[1] + 1))
    concept_tokens = [int(c) for c in rng.permutation(present)][: max(1, min(length, n_present))]
    n_filler = length - len(concept_tokens)
    fillers = [int(t) for t in rng.integers(spec.num_concepts, spec.vocab_size, size=n_filler)]
    tokens = concept_tokens + fillers
    order = rng.permutation(len(tokens))
    tokens = [tokens[i] for i in order]

    dominant = min(
        salience_by_concept, key=lambda c: (-salience_by_concept[c], c)
    )  # highest total salience, ties to the lowest concept id
    label = dominant % spec.num_classes

    sample_id = f"{split}_{index:05d}"
    return (
        Sample(id=sample_id, parts=parts, tokens=tokens, class_label=label),
        RegionSet(image_id=sample_id, regions=regions),
    )


def gen_synthetic(spec: SyntheticSpec, out_dir) -> Path:
    """Write a dataset directory (samples, regions, labels, spec echo).

    Byte-identical across runs for the same spec. Heldout ids are disjoint
    from train ids by construction.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    splits = {
        "train": [_make_sample(spec, "train", i) for i in range(spec.train_size)],
        "held": [_make_sample(spec, "held", i) for i in range(spec.heldout_size)],
    }

    for split, filename in (("train", TRAIN_FILE), ("held", HELDOUT_FILE)):
        with open(out / filename, "w", encoding="utf-8") as fh:
            for sample, _ in splits[split]:
                fh.write(
                    json.dumps(
                        {
                            "id": sample.id,
                            "parts": [[float(v) for v in row] for row in sample.parts],
                            "tokens": sample.tokens,
                            "class": sample.class_label,
                        }
                    )
                    + "\n"
                )

    save_regions(out / REGIONS_FILE, [rs for pairs in splits.values() for _, rs in pairs])

    with open(out / LABELS_FILE, "w", encoding="utf-8") as fh:
        fh.write("id,class\n")
        for pairs in splits.values():
            for sample, _ in pairs:
                fh.write(f"{sample.id},{sample.class_label}\n")

    with open(out / SPEC_FILE, "w", encoding="utf-8") as fh:
        json.dump(asdict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def load_samples(path) -> list[Sample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                samples.append(
                    Sample(
                        id=str(obj["id"]),
                        parts=np.asarray(obj["parts"], dtype=np.float32),
                        tokens=[int(t) for t in obj["tokens"]],
                        class_label=int(obj["class"]),
                    )
                )
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad sample record: {exc!r}", line=lineno) from exc
    return samples


def load_labels(path) -> dict[str, int]:
    labels: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "id,class":
            raise ParseError(f"expected header 'id,class', got {header!r}", line=1)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                sample_id, value = line.strip().split(",")
                labels[sample_id] = int(value)
            except ValueError as exc:
                raise ParseError(f"bad label row: {line.strip()!r}", line=lineno) from exc
    return labels


# --------------------------------------------------------------------------
# Embedding cache (DCEC)


def write_cache(path, ids: list[str], matrix: np.ndarray) -> None:
    """Persist an id-keyed embedding matrix; read(write(x)) is bit-exact."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise InputError(f"write_cache: expected 2-D matrix, got shape {matrix.shape}")
    if len(ids) != matrix.shape[0]:
        raise InputError(f"write_cache: {len(ids)} ids for {matrix.shape[0]} rows")
    if not np.all(np.isfinite(matrix)):
        raise NumericError("write_cache: non-finite values in matrix")
    for sample_id in ids:
        if not sample_id or "\n" in sample_id:
            raise InputError(f"write_cache: invalid id {sample_id!r}")

    ids_block = "\n".join(ids).encode("utf-8")
    payload = matrix.astype("<f4", copy=False).tobytes(order="C")
    blob = (
        CACHE_MAGIC
        + struct.pack("<HII", CACHE_VERSION, matrix.shape[1], matrix.shape[0])
        + struct.pack("<I", len(ids_block))
        + ids_block
        + payload
    )
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read_cache(path) -> tuple[list[str], np.ndarray]:
    """Parse a DCEC file; malformed input raises with the byte offset."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != CACHE_MAGIC:
        raise ParseError(f"bad magic {blob[:4]!r}, expected {CACHE_MAGIC!r}", offset=0)
    if len(blob) < 14:
        raise ParseError("truncated header", offset=len(blob))
    version, dim, count = struct.unpack_from("<HII", blob, 4)
    if version != CACHE_VERSION:
        raise ParseError(f"unsupported version {version}", offset=4)
    (ids_len,) = struct.unpack_from("<I", blob, 14)
    ids_start = 18
    if len(blob) < ids_start + ids_len:
        raise ParseError("truncated ids block", offset=len(blob))
    ids_block = blob[ids_start : ids_start + ids_len]
    ids = ids_block.decode("utf-8").split("\n") if ids_block else []
    if len(ids) != count:
        raise ParseError(f"{len(ids)} ids but count field says {count}", offset=ids_start)
    payload_start = ids_start + ids_len
    expected = count * dim * 4
    if len(blob) - payload_start != expected:
        raise ParseError(
            f"payload of {len(blob) - payload_start} bytes, expected {expected}",
            offset=payload_start,
        )
    matrix = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=payload_start)
    matrix = matrix.reshape(count, dim).astype(np.float32, copy=True)
    if not np.all(np.isfinite(matrix)):
        raise NumericError(f"non-finite values in cache {path}")
    return ids, matrix


def load_cache_pair(image_path, text_path) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Read id-aligned image/text caches; mismatched ids are a validation error."""
    image_ids, images = read_cache(image_path)
    text_ids, texts = read_cache(text_path)
    if image_ids != text_ids:
        raise ValidationError("image/text cache ids are not aligned", field="ids")
    return image_ids, images, texts


# --------------------------------------------------------------------------
# Encoding


def encode_samples(
    samples: list[Sample], text_enc: TextEncoder, image_enc: ImageEncoder
) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Run the frozen encoders over samples; rows come back unit-normalized."""
    if not samples:
        raise InputError("encode_samples: empty sample list")
    ids, img_rows, txt_rows = [], [], []
    for sample in samples:
        ids.append(sample.id)
        img_rows.append(image_enc.encode_global(sample.parts).data)
        txt_rows.append(text_enc.encode(sample.tokens)[0].data)
    return ids, np.stack(img_rows).astype(np.float32), np.stack(txt_rows).astype(np.float32)


def encode_dataset(
    samples: list[Sample],
    text_enc: TextEncoder,
    image_enc: ImageEncoder,
    out_dir,
    prefix: str,
) -> tuple[Path, Path]:
    """Write id-aligned image/text caches for a sample list."""
    ids, images, texts = encode_samples(samples, text_enc, image_enc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image_path = out / f"{prefix}_images.dcec"
    text_path = out / f"{prefix}_texts.dcec"
    write_cache(image_path, ids, images)
    write_cache(text_path, ids, texts)
    return image_path, text_path


def encode_class_prompts(
    text_enc: TextEncoder, num_classes: int
) -> tuple[list[str], np.ndarray]:
    """Embed the per-class prompt token sequences."""
    rows = []
    ids = []
    for c, tokens in enumerate(class_prompt_tokens(num_classes, text_enc.config.vocab_size)):
        ids.append(f"class{c}")
        rows.append(text_enc.encode(tokens)[0].data)
    return ids, np.stack(rows).astype(np.float32)
