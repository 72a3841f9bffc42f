import numpy as np
import pytest

from dclip.evaluation import (
    SimilarityMatrix,
    build_report,
    confusion_matrix,
    mean_average_precision,
    recall_at_k,
    write_confusion_csv,
    zero_shot_topk,
)
from dclip.exceptions import InputError
from dclip.rng import stream


# --------------------------------------------------------------------------
# Brute-force reference implementations, kept deliberately independent of the
# library code paths (plain python loops + sorted()).


def oracle_ranking(values, col_ids, row):
    return sorted(range(len(col_ids)), key=lambda j: (-values[row][j], col_ids[j]))


def oracle_recall(values, row_ids, col_ids, k, gt):
    hits = 0
    for i, rid in enumerate(row_ids):
        order = oracle_ranking(values, col_ids, i)
        target = col_ids.index(gt[rid])
        if target in order[:k]:
            hits += 1
    return hits / len(row_ids)


def oracle_map(values, row_ids, col_ids, relevance):
    aps = []
    for i, rid in enumerate(row_ids):
        rel = {col_ids.index(c) for c in relevance[rid]}
        order = oracle_ranking(values, col_ids, i)
        hits, total = 0, 0.0
        for rank, j in enumerate(order, start=1):
            if j in rel:
                hits += 1
                total += hits / rank
        aps.append(total / len(rel))
    return sum(aps) / len(aps)


def oracle_topk(image_embs, prompt_embs, labels, k):
    hits = 0
    for i, lab in enumerate(labels):
        sims = []
        for c in range(prompt_embs.shape[0]):
            a, b = image_embs[i], prompt_embs[c]
            sims.append(float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))
        order = sorted(range(len(sims)), key=lambda c: (-sims[c], c))
        if lab in order[:k]:
            hits += 1
    return hits / len(labels)


def random_fixture(seed, max_side=16):
    rng = stream(seed, "test/eval-fixture")
    q = int(rng.integers(2, max_side + 1))
    c = int(rng.integers(2, max_side + 1))
    values = rng.normal(size=(q, c))
    if rng.uniform() < 0.3:  # inject ties to exercise deterministic ordering
        values[0, : min(3, c)] = 0.5
    row_ids = [f"q{i:03d}" for i in range(q)]
    col_ids = [f"c{i:03d}" for i in range(c)]
    gt = {row_ids[i]: col_ids[int(rng.integers(c))] for i in range(q)}
    return SimilarityMatrix(values, row_ids, col_ids), gt


class TestRecall:
    def test_identity_matrix(self):
        sim = SimilarityMatrix(np.eye(3), ["a", "b", "c"], ["x", "y", "z"])
        gt = {"a": "x", "b": "y", "c": "z"}
        assert recall_at_k(sim, 1, gt) == 1.0

    def test_k_covers_everything(self):
        sim, gt = random_fixture(0)
        assert recall_at_k(sim, len(sim.col_ids), gt) == 1.0

    def test_three_by_three_fixture(self):
        # queries q0/q1 rank their match first; q2's best candidate is c1
        values = np.array([[0.9, 0.8, 0.1], [0.2, 0.9, 0.8], [0.1, 0.2, 0.3]]).T
        sim = SimilarityMatrix(values, ["q0", "q1", "q2"], ["c0", "c1", "c2"])
        gt = {"q0": "c0", "q1": "c1", "q2": "c2"}
        assert abs(recall_at_k(sim, 1, gt) - 2.0 / 3.0) <= 1e-12

    def test_missing_ground_truth(self):
        sim, gt = random_fixture(1)
        del gt[sim.row_ids[0]]
        with pytest.raises(InputError):
            recall_at_k(sim, 1, gt)

    def test_monotone_in_k(self):
        for seed in range(10):
            sim, gt = random_fixture(seed)
            series = [recall_at_k(sim, k, gt) for k in range(1, len(sim.col_ids) + 1)]
            assert all(a <= b for a, b in zip(series, series[1:]))


class TestMAP:
    def test_single_relevant_first(self):
        sim = SimilarityMatrix(np.array([[0.9, 0.1]]), ["q"], ["a", "b"])
        assert mean_average_precision(sim, {"q": {"a"}}) == 1.0

    def test_single_relevant_rank_two(self):
        sim = SimilarityMatrix(np.array([[0.5, 0.9, 0.1]]), ["q"], ["a", "b", "c"])
        assert mean_average_precision(sim, {"q": {"a"}}) == 0.5

    def test_two_relevant_ranks_one_and_three(self):
        sim = SimilarityMatrix(np.array([[0.9, 0.5, 0.7, 0.1]]), ["q"], ["a", "b", "c", "d"])
        expected = (1.0 + 2.0 / 3.0) / 2.0
        assert abs(mean_average_precision(sim, {"q": {"a", "b"}}) - expected) <= 1e-12

    def test_empty_relevance(self):
        sim, _ = random_fixture(2)
        with pytest.raises(InputError):
            mean_average_precision(sim, {rid: set() for rid in sim.row_ids})

    def test_map_equals_mrr_for_single_relevant(self):
        for seed in range(20):
            sim, gt = random_fixture(seed)
            relevance = {r: {c} for r, c in gt.items()}
            got = mean_average_precision(sim, relevance)
            reciprocal_ranks = []
            for i, rid in enumerate(sim.row_ids):
                order = oracle_ranking(sim.values, sim.col_ids, i)
                rank = order.index(sim.col_ids.index(gt[rid])) + 1
                reciprocal_ranks.append(1.0 / rank)
            assert got == sum(reciprocal_ranks) / len(reciprocal_ranks)


class TestOracleEquivalence:
    def test_hundred_random_fixtures(self):
        for seed in range(100):
            sim, gt = random_fixture(seed)
            relevance = {r: {c} for r, c in gt.items()}
            for k in (1, 2, 5):
                assert recall_at_k(sim, k, gt) == oracle_recall(sim.values, sim.row_ids, sim.col_ids, k, gt)
            assert mean_average_precision(sim, relevance) == oracle_map(
                sim.values, sim.row_ids, sim.col_ids, relevance
            )

    def test_scale_invariance(self):
        for seed in range(10):
            sim, gt = random_fixture(seed)
            scaled = SimilarityMatrix(sim.values * 7.3, sim.row_ids, sim.col_ids)
            relevance = {r: {c} for r, c in gt.items()}
            assert recall_at_k(sim, 3, gt) == recall_at_k(scaled, 3, gt)
            assert mean_average_precision(sim, relevance) == mean_average_precision(scaled, relevance)


class TestZeroShot:
    def test_perfect_prompts(self):
        prompts = np.eye(4, dtype=np.float32)
        labels = [0, 1, 2, 3, 1]
        images = prompts[labels]
        assert zero_shot_topk(images, prompts, labels, 1) == 1.0

    def test_k_equals_classes(self):
        rng = stream(3, "test/zs")
        images = rng.normal(size=(8, 5))
        prompts = rng.normal(size=(3, 5))
        labels = [int(rng.integers(3)) for _ in range(8)]
        assert zero_shot_topk(images, prompts, labels, 3) == 1.0

    def test_against_oracle(self):
        rng = stream(4, "test/zs")
        images = rng.normal(size=(20, 6))
        prompts = rng.normal(size=(5, 6))
        labels = [int(rng.integers(5)) for _ in range(20)]
        for k in (1, 2, 5):
            assert zero_shot_topk(images, prompts, labels, k) == oracle_topk(images, prompts, labels, k)

    def test_label_out_of_range(self):
        with pytest.raises(InputError):
            zero_shot_topk(np.ones((1, 3)), np.ones((2, 3)), [5], 1)


class TestConfusion:
    def test_perfect_predictor_diagonal(self):
        prompts = np.eye(3, dtype=np.float32)
        labels = [0, 1, 2, 2]
        images = prompts[labels]
        counts = confusion_matrix(images, prompts, labels)
        assert np.array_equal(counts, np.diag([1, 1, 2]))

    def test_row_sums_conserve_class_counts(self):
        rng = stream(5, "test/conf")
        images = rng.normal(size=(30, 4))
        prompts = rng.normal(size=(6, 4))
        labels = [int(rng.integers(6)) for _ in range(30)]
        counts = confusion_matrix(images, prompts, labels)
        for c in range(6):
            assert counts[c].sum() == labels.count(c)

    def test_hand_tally(self):
        # 10 samples engineered so predictions are knowable by inspection
        prompts = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        images = np.array(
            [[1, 0], [1, 0], [0.9, 0.1], [0, 1], [0.2, 0.8], [1, 0], [0, 1], [0, 1], [0.6, 0.4], [0.1, 0.9]],
            dtype=np.float32,
        )
        labels = [0, 0, 1, 1, 1, 0, 0, 1, 0, 1]
        counts = confusion_matrix(images, prompts, labels)
        assert np.array_equal(counts, np.array([[4, 1], [1, 4]]))

    def test_csv_emission(self, tmp_path):
        counts = np.array([[2, 0], [1, 3]])
        write_confusion_csv(tmp_path / "c.csv", counts)
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "true\\pred,0,1"
        assert lines[1] == "0,2,0"
        assert lines[2] == "1,1,3"


class TestReport:
    def test_identical_caches_are_perfect(self):
        rng = stream(6, "test/report")
        emb = rng.normal(size=(12, 8)).astype(np.float32)
        ids = [f"s{i}" for i in range(12)]
        report = build_report(ids, emb, ids, emb.copy())
        for direction in (report.t2i, report.i2t):
            assert direction["r1"] == direction["r5"] == direction["r10"] == 1.0
            assert direction["map"] == 1.0
        assert report.n_queries == 12

    def test_transpose_swaps_directions(self):
        rng = stream(7, "test/report")
        images = rng.normal(size=(10, 8)).astype(np.float32)
        texts = rng.normal(size=(10, 8)).astype(np.float32)
        ids = [f"s{i}" for i in range(10)]
        forward = build_report(ids, images, ids, texts)
        swapped = build_report(ids, texts, ids, images)
        assert forward.t2i == swapped.i2t
        assert forward.i2t == swapped.t2i

    def test_report_json_schema(self):
        rng = stream(8, "test/report")
        emb = rng.normal(size=(5, 4)).astype(np.float32)
        ids = [f"s{i}" for i in range(5)]
        report = build_report(ids, emb, ids, emb.copy())
        import json

        payload = json.loads(report.to_json())
        assert set(payload.keys()) == {"direction", "zero_shot", "n_queries"}
        assert set(payload["direction"].keys()) == {"t2i", "i2t"}
        assert set(payload["direction"]["t2i"].keys()) == {"r1", "r5", "r10", "map"}
        assert payload["zero_shot"] == {"top1": None, "top5": None}

    def test_r1_le_r5_le_r10(self):
        rng = stream(9, "test/report")
        images = rng.normal(size=(30, 8)).astype(np.float32)
        texts = (images + rng.normal(size=(30, 8)) * 0.8).astype(np.float32)
        ids = [f"s{i}" for i in range(30)]
        report = build_report(ids, images, ids, texts)
        for d in (report.t2i, report.i2t):
            assert d["r1"] <= d["r5"] <= d["r10"]
            for value in d.values():
                assert 0.0 <= value <= 1.0
