"""Encoder and detector backends.

The "hash" encoder and "grid" detector are deterministic, dependency-light
stand-ins that exercise every byte of the export pipeline without model
weights. The "clip" encoder (transformers) and "torchvision" detector load
real pretrained models; they are lazy imports so the bridge installs and
runs without torch present.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

from .config import BridgeError


# --------------------------------------------------------------------------
# Encoders


class HashEncoderBackend:
    """Deterministic pseudo-embeddings from content digests.

    Pairs with the same (image bytes, caption) land on correlated rows so the
    exported caches contain usable structure, but nothing is learned.
    """

    def __init__(self, embed_dim: int):
        self.embed_dim = embed_dim

    def _rows(self, seeds: list[bytes]) -> np.ndarray:
        out = np.empty((len(seeds), self.embed_dim), dtype=np.float32)
        for i, seed in enumerate(seeds):
            digest = hashlib.sha256(seed).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            out[i] = rng.standard_normal(self.embed_dim).astype(np.float32)
        return out

    def encode_images(self, paths: list[Path]) -> np.ndarray:
        return self._rows([Path(p).read_bytes() for p in paths])

    def encode_texts(self, captions: list[str]) -> np.ndarray:
        return self._rows([c.encode("utf-8") for c in captions])


class ClipEncoderBackend:
    """Two-tower pretrained encoder via transformers (512-d base / 768-d large)."""

    def __init__(self, model_id: str, embed_dim: int, device: str = "cpu", batch_size: int = 16):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:  # pragma: no cover - exercised only with extras installed
            raise BridgeError(
                "the clip encoder backend needs torch and transformers (pip install 'dclip-bridge[real]')"
            ) from exc
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_id).to(device).eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)
        self.device = device
        self.batch_size = batch_size
        self.embed_dim = self.model.config.projection_dim
        if self.embed_dim != embed_dim:
            raise BridgeError(
                f"backbone {model_id} projects to {self.embed_dim}-d but config says {embed_dim}"
            )

    def encode_images(self, paths: list[Path]) -> np.ndarray:  # pragma: no cover
        rows = []
        with self._torch.no_grad():
            for i in range(0, len(paths), self.batch_size):
                images = [Image.open(p).convert("RGB") for p in paths[i : i + self.batch_size]]
                inputs = self.processor(images=images, return_tensors="pt").to(self.device)
                rows.append(self.model.get_image_features(**inputs).cpu().numpy())
        return np.concatenate(rows).astype(np.float32)

    def encode_texts(self, captions: list[str]) -> np.ndarray:  # pragma: no cover
        rows = []
        with self._torch.no_grad():
            for i in range(0, len(captions), self.batch_size):
                inputs = self.processor(
                    text=captions[i : i + self.batch_size],
                    return_tensors="pt",
                    padding=True,
                    truncation=True,
                ).to(self.device)
                rows.append(self.model.get_text_features(**inputs).cpu().numpy())
        return np.concatenate(rows).astype(np.float32)


# --------------------------------------------------------------------------
# Detectors


class GridDetector:
    """Deterministic stub: a content-seeded handful of valid boxes per image."""

    def detect(self, path: Path) -> list[dict]:
        with Image.open(path) as img:
            width, height = img.size
        digest = hashlib.sha256(Path(path).read_bytes()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[8:16], "little"))
        boxes = []
        for _ in range(int(rng.integers(1, 5))):
            w = float(rng.uniform(0.15, 0.5))
            h = float(rng.uniform(0.15, 0.5))
            x = float(rng.uniform(0.0, 1.0 - w))
            y = float(rng.uniform(0.0, 1.0 - h))
            boxes.append(
                {
                    "bbox": (x, y, w, h),
                    "confidence": float(rng.uniform(0.25, 0.99)),
                    "class_id": int(rng.integers(0, 80)),
                }
            )
        return boxes


class TorchvisionDetector:
    """Pretrained detection model; pixel boxes converted to normalized xywh."""

    def __init__(self, score_threshold: float = 0.3, device: str = "cpu"):
        try:  # pragma: no cover - exercised only with extras installed
            import torch
            from torchvision.models import detection
            from torchvision.transforms.functional import pil_to_tensor
        except ImportError as exc:
            raise BridgeError(
                "the torchvision detector backend needs torch and torchvision"
            ) from exc
        self._torch = torch
        self._pil_to_tensor = pil_to_tensor
        weights = detection.FasterRCNN_ResNet50_FPN_Weights.DEFAULT
        self.model = detection.fasterrcnn_resnet50_fpn(weights=weights).to(device).eval()
        self.score_threshold = score_threshold
        self.device = device

    def detect(self, path: Path) -> list[dict]:  # pragma: no cover
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            width, height = rgb.size
            tensor = self._pil_to_tensor(rgb).float().div(255.0).to(self.device)
        with self._torch.no_grad():
            (result,) = self.model([tensor])
        boxes = []
        for xyxy, score, label in zip(result["boxes"], result["scores"], result["labels"]):
            if float(score) < self.score_threshold:
                continue
            x0, y0, x1, y1 = (float(v) for v in xyxy)
            x = max(0.0, min(1.0, x0 / width))
            y = max(0.0, min(1.0, y0 / height))
            w = max(1e-6, min(1.0 - x, (x1 - x0) / width))
            h = max(1e-6, min(1.0 - y, (y1 - y0) / height))
            boxes.append(
                {
                    "bbox": (x, y, w, h),
                    "confidence": min(1.0, float(score)),
                    "class_id": int(label),
                }
            )
        return boxes


def make_encoder(config) -> HashEncoderBackend | ClipEncoderBackend:
    if config.encoder == "hash":
        return HashEncoderBackend(config.embed_dim)
    if config.encoder == "clip":
        return ClipEncoderBackend(config.model_id, config.embed_dim, config.device, config.batch_size)
    raise BridgeError(f"unknown encoder backend {config.encoder!r}")


def make_detector(config) -> GridDetector | TorchvisionDetector:
    if config.detector == "grid":
        return GridDetector()
    if config.detector == "torchvision":
        return TorchvisionDetector(device=config.device)
    raise BridgeError(f"unknown detector backend {config.detector!r}")
