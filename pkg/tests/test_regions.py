import json

import numpy as np
import pytest

from dclip.exceptions import ParameterError, ParseError, ShapeError, ValidationError
from dclip.regions import (
    Region,
    RegionSet,
    apply_region_weights,
    cap_regions,
    load_regions,
    region_weight,
    save_regions,
)
from dclip.rng import stream
from dclip.tensor import Tensor


class TestRegionWeight:
    def test_maximal(self):
        assert region_weight(1.0, 1.0, 1.0) == 1.0

    def test_clamp_forces_zero(self):
        for cos in (0.0, -0.3, -1.0):
            assert region_weight(0.9, 0.5, cos) == 0.0

    def test_decided_formula(self):
        assert abs(region_weight(0.8, 0.25, 0.5) - 0.2) <= 1e-12

    def test_range_checks(self):
        with pytest.raises(ParameterError):
            region_weight(1.1, 0.5, 0.5)
        with pytest.raises(ParameterError):
            region_weight(0.5, 0.0, 0.5)
        with pytest.raises(ParameterError):
            region_weight(0.5, 0.5, -1.5)

    def test_zero_iff_conf_zero_or_cos_nonpositive(self):
        rng = stream(0, "test/weights")
        for _ in range(200):
            c = float(rng.uniform(0, 1))
            a = float(rng.uniform(0.01, 1))
            s = float(rng.uniform(-1, 1))
            w = region_weight(c, a, s)
            assert (w == 0.0) == (c == 0.0 or s <= 0.0)

    def test_monotone_in_each_argument(self):
        rng = stream(1, "test/monotone")
        for _ in range(100):
            c = float(rng.uniform(0.1, 0.9))
            a = float(rng.uniform(0.1, 0.9))
            s = float(rng.uniform(0.05, 0.9))
            base = region_weight(c, a, s)
            assert region_weight(min(1.0, c + 0.05), a, s) >= base
            assert region_weight(c, min(1.0, a + 0.05), s) >= base
            assert region_weight(c, a, min(1.0, s + 0.05)) >= base


class TestApplyWeights:
    def test_uniform_weights_identity(self):
        rows = Tensor(np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32))
        out = apply_region_weights(rows, np.array([0.4, 0.4, 0.4]))
        assert np.array_equal(out.data, rows.data)

    def test_zero_weight_zeroes_row(self):
        rows = Tensor(np.ones((2, 3), dtype=np.float32))
        out = apply_region_weights(rows, np.array([1.0, 0.0]))
        assert np.array_equal(out.data[1], np.zeros(3, dtype=np.float32))
        assert np.array_equal(out.data[0], np.ones(3, dtype=np.float32))

    def test_max_normalization(self):
        a = np.array([1.0, 2.0, 3.0], dtype=np.float32)
        b = np.array([4.0, 5.0, 6.0], dtype=np.float32)
        out = apply_region_weights(Tensor(np.stack([a, b])), np.array([2.0, 1.0]))
        assert np.allclose(out.data[0], a)
        assert np.allclose(out.data[1], 0.5 * b)

    def test_all_zero_warns_and_passes_through(self):
        rows = Tensor(np.random.default_rng(1).normal(size=(2, 3)).astype(np.float32))
        with pytest.warns(RuntimeWarning):
            out = apply_region_weights(rows, np.zeros(2))
        assert np.array_equal(out.data, rows.data)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            apply_region_weights(Tensor(np.ones((2, 3), dtype=np.float32)), np.ones(3))


class TestRegionValidation:
    def test_valid_region(self):
        Region(bbox=(0.1, 0.2, 0.3, 0.4), confidence=0.9, class_id=2)

    def test_bbox_overflow(self):
        with pytest.raises(ValidationError) as exc:
            Region(bbox=(0.5, 0.1, 0.7, 0.2), confidence=0.5, class_id=0)
        assert exc.value.field == "bbox"

    def test_bad_confidence(self):
        with pytest.raises(ValidationError) as exc:
            Region(bbox=(0.1, 0.1, 0.2, 0.2), confidence=1.5, class_id=0)
        assert exc.value.field == "confidence"

    def test_cap_keeps_most_confident_in_order(self):
        regions = [
            Region(bbox=(0.0, 0.0, 0.1, 0.1), confidence=c, class_id=i)
            for i, c in enumerate([0.5, 0.9, 0.1, 0.8])
        ]
        capped = cap_regions(regions, r_max=2)
        assert [r.class_id for r in capped] == [1, 3]


class TestRegionFiles:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_regions(path) == []

    def test_single_line(self, tmp_path):
        path = tmp_path / "one.jsonl"
        path.write_text(
            json.dumps(
                {
                    "image_id": "img_7",
                    "regions": [{"bbox": [0.1, 0.1, 0.2, 0.2], "confidence": 0.5, "class_id": 3}],
                }
            )
            + "\n"
        )
        sets = load_regions(path)
        assert len(sets) == 1 and sets[0].image_id == "img_7"
        assert sets[0].regions[0].class_id == 3

    def test_invariant_violation_names_image(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(
            json.dumps(
                {
                    "image_id": "img_bad",
                    "regions": [{"bbox": [0.5, 0.1, 0.7, 0.2], "confidence": 0.5, "class_id": 0}],
                }
            )
            + "\n"
        )
        with pytest.raises(ValidationError) as exc:
            load_regions(path)
        assert "img_bad" in str(exc.value)

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "malformed.jsonl"
        good = json.dumps({"image_id": "a", "regions": []})
        path.write_text(good + "\n{not json\n")
        with pytest.raises(ParseError) as exc:
            load_regions(path)
        assert exc.value.line == 2

    def test_round_trip(self, tmp_path):
        sets = [
            RegionSet(
                image_id=f"img_{i}",
                regions=[
                    Region(bbox=(0.1 * i, 0.1, 0.2, 0.3), confidence=0.5 + 0.1 * i, class_id=i)
                    for _ in range(2)
                ],
            )
            for i in range(3)
        ]
        path = tmp_path / "rt.jsonl"
        save_regions(path, sets)
        loaded = load_regions(path)
        assert [s.image_id for s in loaded] == [s.image_id for s in sets]
        for a, b in zip(loaded, sets):
            assert [r.bbox for r in a.regions] == [r.bbox for r in b.regions]
