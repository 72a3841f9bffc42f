"""Detector-proposed regions and the teacher's penalty weights.

A region carries a normalized bbox, a detector confidence, and a class id.
The penalty weight multiplies confidence, sqrt of box area, and the clamped
cosine similarity between the region's embedding and the paired caption
embedding; weights are then max-normalized and used to scale region
embeddings before fusion. The student never touches any of this.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .exceptions import ParameterError, ParseError, ShapeError, ValidationError
from .tensor import Tensor

R_MAX = 10  # regions kept per image, by descending confidence

_BBOX_SLACK = 1e-9  # tolerate float roundtrip fuzz on the x+w <= 1 checks


@dataclass(frozen=True)
class Region:
    """One proposed region: bbox (x, y, w, h) in [0,1] coordinates, confidence, class id."""

    bbox: tuple[float, float, float, float]
    confidence: float
    class_id: int

    def __post_init__(self):
        x, y, w, h = self.bbox
        if x < 0 or y < 0:
            raise ValidationError(f"bbox origin ({x}, {y}) negative", field="bbox")
        if w <= 0 or h <= 0:
            raise ValidationError(f"bbox size ({w}, {h}) not positive", field="bbox")
        if x + w > 1.0 + _BBOX_SLACK:
            raise ValidationError(f"bbox exceeds right edge: x+w = {x + w}", field="bbox")
        if y + h > 1.0 + _BBOX_SLACK:
            raise ValidationError(f"bbox exceeds bottom edge: y+h = {y + h}", field="bbox")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]", field="confidence")
        if self.class_id < 0:
            raise ValidationError(f"class_id {self.class_id} negative", field="class_id")

    @property
    def area(self) -> float:
        return self.bbox[2] * self.bbox[3]


@dataclass
class RegionSet:
    """All proposed regions for one image, plus per-region weights once computed."""

    image_id: str
    regions: list[Region]
    weights: list[float] | None = field(default=None)


def region_weight(confidence: float, area_frac: float, cos_to_text: float) -> float:
    """Penalty weight: confidence * sqrt(area) * max(cos, 0).

    Monotone non-decreasing in each argument over its positive range; zero
    exactly when confidence is zero or the region contradicts the caption
    (cos <= 0).
    """
    if not 0.0 <= confidence <= 1.0:
        raise ParameterError(f"confidence {confidence} outside [0, 1]")
    if not 0.0 < area_frac <= 1.0:
        raise ParameterError(f"area fraction {area_frac} outside (0, 1]")
    if not -1.0 <= cos_to_text <= 1.0 + 1e-6:
        raise ParameterError(f"cosine {cos_to_text} outside [-1, 1]")
    return confidence * float(np.sqrt(area_frac)) * max(cos_to_text, 0.0)


def apply_region_weights(region_embs: Tensor, weights: np.ndarray) -> Tensor:
    """Scale region rows by weight / max(weight).

    Max-normalization keeps the strongest region at full magnitude. If every
    weight is zero the rows pass through unchanged (uniform weight 1) with a
    warning.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if region_embs.ndim != 2 or region_embs.shape[0] < 1:
        raise ShapeError(f"apply_region_weights: expected non-empty 2-D, got {region_embs.shape}")
    if weights.ndim != 1 or weights.shape[0] != region_embs.shape[0]:
        raise ShapeError(
            f"apply_region_weights: {weights.shape[0]} weights for {region_embs.shape[0]} rows"
        )
    if (weights < 0).any():
        raise ParameterError("apply_region_weights: negative weight")
    top = weights.max()
    if top == 0.0:
        warnings.warn("all region weights zero; using uniform weights", RuntimeWarning, stacklevel=2)
        scaled = np.ones_like(weights)
    else:
        scaled = weights / top
    factors = np.broadcast_to(
        scaled.astype(region_embs.data.dtype)[:, None], region_embs.shape
    ).copy()
    return T.mul(region_embs, Tensor(factors))


def cap_regions(regions: list[Region], r_max: int = R_MAX) -> list[Region]:
    """Keep the r_max most confident regions, preserving original order among survivors."""
    if len(regions) <= r_max:
        return list(regions)
    ranked = sorted(range(len(regions)), key=lambda i: (-regions[i].confidence, i))
    keep = sorted(ranked[:r_max])
    return [regions[i] for i in keep]


def penalty_weights(
    region_set: RegionSet, region_embs: np.ndarray, text_emb: np.ndarray
) -> np.ndarray:
    """Compute the penalty weight of each region against its embedding row.

    `region_embs` rows align 1:1 with `region_set.regions` (the caller pairs
    regions with their crops/patches). Weights are also stored back on the set.
    """
    if len(region_set.regions) != region_embs.shape[0]:
        raise ShapeError(
            f"{len(region_set.regions)} regions but {region_embs.shape[0]} embedding rows"
        )
    text_norm = float(np.linalg.norm(text_emb))
    out = np.empty(len(region_set.regions), dtype=np.float64)
    for i, region in enumerate(region_set.regions):
        row = region_embs[i]
        row_norm = float(np.linalg.norm(row))
        if row_norm <= T.NORM_EPS or text_norm <= T.NORM_EPS:
            cos = 0.0
        else:
            cos = float(row @ text_emb) / (row_norm * text_norm)
            cos = min(1.0, max(-1.0, cos))
        out[i] = region_weight(region.confidence, max(region.area, 1e-12), cos)
    region_set.weights = [float(w) for w in out]
    return out


# --------------------------------------------------------------------------
# File format: one JSON object per line


def load_regions(path) -> list[RegionSet]:
    """Parse a regions JSONL file; malformed lines and invariant violations
    raise with the line number / offending image id."""
    sets: list[RegionSet] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(obj, dict) or "image_id" not in obj or "regions" not in obj:
                raise ParseError("expected object with image_id and regions", line=lineno)
            image_id = obj["image_id"]
            regions = []
            for j, entry in enumerate(obj["regions"]):
                try:
                    bbox = entry["bbox"]
                    regions.append(
                        Region(
                            bbox=(float(bbox[0]), float(bbox[1]), float(bbox[2]), float(bbox[3])),
                            confidence=float(entry["confidence"]),
                            class_id=int(entry["class_id"]),
                        )
                    )
                except ValidationError as exc:
                    raise ValidationError(
                        f"image {image_id!r} region {j}: {exc}", field=exc.field
                    ) from exc
                except (KeyError, IndexError, TypeError, ValueError) as exc:
                    raise ParseError(f"image {image_id!r} region {j}: {exc!r}", line=lineno) from exc
            sets.append(RegionSet(image_id=image_id, regions=regions))
    return sets


def save_regions(path, sets: list[RegionSet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rs in sets:
            obj = {
                "image_id": rs.image_id,
                "regions": [
                    {
                        "bbox": [float(v) for v in r.bbox],
                        "confidence": float(r.confidence),
                        "class_id": int(r.class_id),
                    }
                    for r in rs.regions
                ],
            }
            fh.write(json.dumps(obj) + "\n")
