"""Exporters: embedding caches and regions JSONL in the dclip formats.

The serialization here is written against the documented byte layouts (DCEC
cache, regions JSONL schema), not against the consumer's code; the files are
the whole contract. Writes are atomic (temp then rename) and rows are
L2-normalized on the way out. Per-image failures skip with a logged id;
producing nothing at all is an error.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from pathlib import Path

import numpy as np

from .backends import make_detector, make_encoder
from .config import BridgeConfig, BridgeError, read_captions

log = logging.getLogger("dclip_bridge")

CACHE_MAGIC = b"DCEC"
CACHE_VERSION = 1


def _atomic_write(path: Path, blob: bytes) -> None:
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def write_embedding_cache(path: Path, ids: list[str], matrix: np.ndarray) -> None:
    """Serialize an id-keyed float32 matrix in the DCEC layout."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise BridgeError(f"cache shape {matrix.shape} does not match {len(ids)} ids")
    if not np.all(np.isfinite(matrix)):
        raise BridgeError("refusing to write non-finite embeddings")
    ids_block = "\n".join(ids).encode("utf-8")
    blob = (
        CACHE_MAGIC
        + struct.pack("<HII", CACHE_VERSION, matrix.shape[1], matrix.shape[0])
        + struct.pack("<I", len(ids_block))
        + ids_block
        + matrix.astype("<f4", copy=False).tobytes(order="C")
    )
    _atomic_write(path, blob)


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise BridgeError("encoder produced a zero-norm embedding")
    return (matrix / norms).astype(np.float32)


def _resolve_images(config: BridgeConfig) -> tuple[list, list[Path]]:
    records = read_captions(config.dataset_dir / config.captions_file)
    if not records:
        raise BridgeError(f"no caption records in {config.dataset_dir / config.captions_file}")
    usable, paths = [], []
    for record in records:
        image = config.find_image(record.id)
        if image is None:
            log.warning("skipping %s: no image file found", record.id)
            continue
        try:
            from PIL import Image

            with Image.open(image) as probe:
                probe.verify()
        except Exception as exc:
            log.warning("skipping %s: unreadable image (%s)", record.id, exc)
            continue
        usable.append(record)
        paths.append(image)
    if not usable:
        raise BridgeError("no readable image-caption pairs; nothing to export")
    return usable, paths


def export_embeddings(config: BridgeConfig) -> tuple[Path, Path]:
    """Write id-aligned image/text caches; returns their paths."""
    records, paths = _resolve_images(config)
    encoder = make_encoder(config)
    images = _normalize_rows(encoder.encode_images(paths))
    texts = _normalize_rows(encoder.encode_texts([r.caption for r in records]))
    if images.shape[1] != config.embed_dim or texts.shape[1] != config.embed_dim:
        raise BridgeError(
            f"backend produced {images.shape[1]}-d rows, config expects {config.embed_dim}"
        )

    config.out_dir.mkdir(parents=True, exist_ok=True)
    ids = [r.id for r in records]
    image_path = config.out_dir / "images.dcec"
    text_path = config.out_dir / "texts.dcec"
    write_embedding_cache(image_path, ids, images)
    write_embedding_cache(text_path, ids, texts)

    labeled = [r for r in records if r.class_id is not None]
    if labeled:
        labels_path = config.out_dir / "labels.csv"
        body = "id,class\n" + "".join(f"{r.id},{r.class_id}\n" for r in labeled)
        _atomic_write(labels_path, body.encode("utf-8"))
    return image_path, text_path


def export_regions(config: BridgeConfig) -> Path:
    """Write the regions JSONL; a failed detection yields an empty region list."""
    records, paths = _resolve_images(config)
    detector = make_detector(config)
    config.out_dir.mkdir(parents=True, exist_ok=True)

    lines = []
    for record, path in zip(records, paths):
        try:
            detections = detector.detect(path)
        except Exception as exc:
            log.warning("detector failed on %s (%s); emitting empty region list", record.id, exc)
            detections = []
        regions = []
        for det in detections:
            x, y, w, h = det["bbox"]
            if not (0.0 <= x and 0.0 <= y and w > 0 and h > 0 and x + w <= 1.0 and y + h <= 1.0):
                raise BridgeError(f"detector produced an out-of-range bbox for {record.id}: {det['bbox']}")
            confidence = float(det["confidence"])
            if not 0.0 <= confidence <= 1.0:
                raise BridgeError(f"detector confidence {confidence} out of range for {record.id}")
            regions.append(
                {
                    "bbox": [float(x), float(y), float(w), float(h)],
                    "confidence": confidence,
                    "class_id": int(det["class_id"]),
                }
            )
        lines.append(json.dumps({"image_id": record.id, "regions": regions}))

    out_path = config.out_dir / "regions.jsonl"
    _atomic_write(out_path, ("\n".join(lines) + "\n").encode("utf-8"))
    return out_path
