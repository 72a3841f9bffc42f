import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from dclip.cli import main
from dclip.data import write_cache


def dir_digest(path: Path, exclude: tuple[str, ...] = ()) -> str:
    h = hashlib.sha256()
    for f in sorted(Path(path).rglob("*")):
        if f.is_file() and f.name not in exclude:
            h.update(str(f.relative_to(path)).encode())
            h.update(f.read_bytes())
    return h.hexdigest()


class TestGenData:
    def test_idempotent(self, tmp_path):
        args = ["gen-data", "--seed", "7", "--train-size", "12", "--heldout-size", "4"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        assert dir_digest(tmp_path / "a") == dir_digest(tmp_path / "b")

    def test_resolved_config_written(self, tmp_path):
        main(["gen-data", "--seed", "3", "--out", str(tmp_path / "d"), "--train-size", "8", "--heldout-size", "2"])
        payload = json.loads((tmp_path / "d" / "resolved_config.json").read_text())
        assert payload["command"] == "gen-data"
        assert payload["spec"]["seed"] == 3


class TestUsageErrors:
    def test_unknown_flag(self, capsys):
        assert main(["gen-data", "--out", "x", "--bogus"]) == 1

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 1

    def test_missing_file_is_input_error(self, tmp_path):
        code = main(["eval", "--images", str(tmp_path / "no.dcec"), "--texts", str(tmp_path / "no.dcec"),
                     "--out", str(tmp_path / "out")])
        assert code == 2

    def test_threads_validation(self, tmp_path):
        assert main(["info", "--threads", "0"]) == 1

    def test_help_lists_preset_defaults(self, capsys):
        with pytest.raises(SystemExit):
            main(["train-teacher", "--help"])
        text = capsys.readouterr().out
        for flag in ("--teacher-epochs", "--student-epochs", "--batch-size", "--clusters", "--variant"):
            assert flag in text
        assert "1e-05" in text or "default 1e-5" in text


class TestEval:
    def test_identical_caches_perfect_report(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        matrix = rng.normal(size=(8, 16)).astype(np.float32)
        ids = [f"s{i}" for i in range(8)]
        write_cache(tmp_path / "i.dcec", ids, matrix)
        write_cache(tmp_path / "t.dcec", ids, matrix)
        code = main(["eval", "--images", str(tmp_path / "i.dcec"), "--texts", str(tmp_path / "t.dcec"),
                     "--out", str(tmp_path / "out")])
        assert code == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["direction"]["t2i"]["r1"] == 1.0
        assert report["direction"]["i2t"]["map"] == 1.0
        assert report["n_queries"] == 8

    def test_labels_without_prompts_rejected(self, tmp_path):
        matrix = np.ones((2, 4), dtype=np.float32)
        write_cache(tmp_path / "i.dcec", ["a", "b"], matrix)
        write_cache(tmp_path / "t.dcec", ["a", "b"], matrix)
        (tmp_path / "labels.csv").write_text("id,class\na,0\nb,1\n")
        code = main(["eval", "--images", str(tmp_path / "i.dcec"), "--texts", str(tmp_path / "t.dcec"),
                     "--labels", str(tmp_path / "labels.csv"), "--out", str(tmp_path / "out")])
        assert code == 2

    def test_corrupt_cache_exit_code(self, tmp_path):
        (tmp_path / "bad.dcec").write_bytes(b"JUNKJUNKJUNK")
        code = main(["eval", "--images", str(tmp_path / "bad.dcec"), "--texts", str(tmp_path / "bad.dcec"),
                     "--out", str(tmp_path / "out")])
        assert code == 2


class TestInfo:
    def test_info_reports_presets(self, capsys):
        assert main(["info"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["variants"]["b"]["teacher_epochs"] == 5
        assert payload["variants"]["l"]["clusters"] == 3


class TestGradcheckCommand:
    def test_prints_per_primitive_and_exits_zero(self, capsys):
        assert main(["gradcheck", "--seeds", "1"]) == 0
        out = capsys.readouterr().out
        for name in ("matmul", "softmax", "l2_normalize", "cosine_sim", "cross_attend", "teacher_loss"):
            assert name in out
        assert "max_rel_err" in out


class TestSeedFallback:
    def test_env_seed_used_when_flag_absent(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DCLIP_SEED", "99")
        main(["gen-data", "--out", str(tmp_path / "env"), "--train-size", "6", "--heldout-size", "2"])
        monkeypatch.delenv("DCLIP_SEED")
        main(["gen-data", "--seed", "99", "--out", str(tmp_path / "flag"), "--train-size", "6", "--heldout-size", "2"])
        assert dir_digest(tmp_path / "env", exclude=("resolved_config.json",)) == dir_digest(
            tmp_path / "flag", exclude=("resolved_config.json",)
        )


class TestNumericExitCode:
    def test_nan_cache_exits_three(self, tmp_path):
        import struct

        # hand-built cache bytes so the NaN bypasses the writer's validation
        ids_block = b"a"
        payload = struct.pack("<ff", float("nan"), 1.0)
        blob = b"DCEC" + struct.pack("<HII", 1, 2, 1) + struct.pack("<I", len(ids_block)) + ids_block + payload
        (tmp_path / "nan.dcec").write_bytes(blob)
        code = main(["eval", "--images", str(tmp_path / "nan.dcec"), "--texts", str(tmp_path / "nan.dcec"),
                     "--out", str(tmp_path / "out")])
        assert code == 3


@pytest.mark.slow
class TestPipeline:
    def test_full_pipeline_deterministic(self, tmp_path):
        data = tmp_path / "data"
        main(["gen-data", "--seed", "7", "--out", str(data), "--train-size", "48", "--heldout-size", "8"])
        for run in ("r1", "r2"):
            out = tmp_path / run
            assert main(["train-teacher", "--data", str(data), "--out", str(out / "t"),
                         "--seed", "7", "--teacher-epochs", "1"]) == 0
            assert main(["distill", "--data", str(data), "--teacher", str(out / "t" / "teacher.dckp"),
                         "--out", str(out / "s"), "--seed", "7", "--student-epochs", "1"]) == 0
            assert main(["eval", "--images", str(out / "s" / "heldout_student_images.dcec"),
                         "--texts", str(out / "s" / "heldout_texts.dcec"),
                         "--labels", str(data / "labels.csv"),
                         "--prompts", str(out / "s" / "class_prompts.dcec"),
                         "--out", str(out / "e")]) == 0
        # resolved_config.json echoes the run's own paths, which differ by design
        assert dir_digest(tmp_path / "r1", exclude=("resolved_config.json",)) == dir_digest(
            tmp_path / "r2", exclude=("resolved_config.json",)
        )
        report = json.loads((tmp_path / "r1" / "e" / "report.json").read_text())
        assert (tmp_path / "r1" / "e" / "confusion.csv").exists()
        assert 0.0 <= report["zero_shot"]["top1"] <= 1.0
