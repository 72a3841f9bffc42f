"""Bridge run configuration and the captions manifest."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


class BridgeError(Exception):
    """Any unrecoverable bridge failure (bad manifest, zero successes, ...)."""


@dataclass
class CaptionRecord:
    id: str
    caption: str
    class_id: int | None


@dataclass
class BridgeConfig:
    """Where the data lives, which models to run, and where outputs go.

    `encoder` selects the image/text embedding backend: "hash" (deterministic,
    no downloads; good for format validation and offline smoke tests) or
    "clip" (pretrained two-tower model via transformers). `detector` is
    "grid" (deterministic stub) or "torchvision" (pretrained detection
    model). `embed_dim` must match the chosen backbone: 512 for the base
    models, 768 for the large ones.
    """

    dataset_dir: Path
    out_dir: Path
    encoder: str = "hash"
    detector: str = "grid"
    model_id: str = "openai/clip-vit-base-patch32"
    embed_dim: int = 512
    batch_size: int = 16
    device: str = "cpu"
    captions_file: str = "captions.tsv"
    image_extensions: tuple[str, ...] = (".png", ".jpg", ".jpeg")

    def __post_init__(self):
        self.dataset_dir = Path(self.dataset_dir)
        self.out_dir = Path(self.out_dir)
        if self.embed_dim not in (512, 768):
            raise BridgeError(f"embed_dim must be 512 or 768, got {self.embed_dim}")
        if self.batch_size < 1:
            raise BridgeError(f"batch_size must be >= 1, got {self.batch_size}")

    def find_image(self, sample_id: str) -> Path | None:
        for ext in self.image_extensions:
            candidate = self.dataset_dir / f"{sample_id}{ext}"
            if candidate.exists():
                return candidate
        return None


def read_captions(path: Path) -> list[CaptionRecord]:
    """Parse the id<TAB>caption<TAB>class? manifest."""
    records: list[CaptionRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise BridgeError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields, got {len(fields)}")
            sample_id, caption = fields[0], fields[1]
            if not sample_id or "\n" in sample_id:
                raise BridgeError(f"{path}:{lineno}: invalid sample id {sample_id!r}")
            if sample_id in seen:
                raise BridgeError(f"{path}:{lineno}: duplicate sample id {sample_id!r}")
            seen.add(sample_id)
            class_id = None
            if len(fields) == 3 and fields[2] != "":
                try:
                    class_id = int(fields[2])
                except ValueError:
                    raise BridgeError(f"{path}:{lineno}: class field {fields[2]!r} is not an integer")
            records.append(CaptionRecord(id=sample_id, caption=caption, class_id=class_id))
    return records
