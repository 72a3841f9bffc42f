import warnings

import numpy as np
import pytest

from dclip.data import SyntheticSpec, gen_synthetic
from dclip.exceptions import ConfigError, InputError, NumericError, ParseError
from dclip.tensor import Tensor
from dclip.training import (
    STEP_LOG_HEADER,
    Adam,
    StudentTrainer,
    TeacherTrainer,
    TrainConfig,
    distill_student,
    epoch_sweep,
    load_checkpoint,
    load_teacher,
    params_digest,
    prepare_data,
    retention_proxy,
    save_checkpoint,
    train_teacher,
)


def quiet_prepare(path, config):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return prepare_data(path, config)


class TestPresets:
    def test_b_column(self):
        cfg = TrainConfig.preset("b")
        assert (cfg.teacher_epochs, cfg.student_epochs) == (5, 2)
        assert (cfg.teacher_lr, cfg.student_lr) == (1e-5, 1e-6)
        assert cfg.batch_size == 32
        assert (cfg.embed_dim, cfg.num_heads) == (512, 8)
        assert cfg.clusters == 1 and cfg.position_mode == "absolute"
        assert cfg.anchor_enabled is False

    def test_l_column(self):
        cfg = TrainConfig.preset("l")
        assert (cfg.teacher_epochs, cfg.student_epochs) == (1, 2)
        assert (cfg.teacher_lr, cfg.student_lr) == (1e-5, 1e-6)
        assert cfg.batch_size == 32
        assert (cfg.embed_dim, cfg.num_heads) == (768, 12)
        assert cfg.clusters == 3 and cfg.position_mode == "rotary"
        assert cfg.anchor_enabled is True

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            TrainConfig.preset("xl")


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
        opt = Adam({"p": p}, lr=0.1)
        p.grad = np.zeros(2, dtype=np.float32)
        opt.step()
        assert np.array_equal(p.data, np.array([1.0, -2.0], dtype=np.float32))

    def test_first_step_magnitude_is_lr(self):
        # measured at a zero-valued parameter so float32 storage rounding
        # stays far below the 1e-6*lr contract tolerance
        for g in (1.0, -3.0, 1e4):
            p = Tensor(np.array(0.0, dtype=np.float32), requires_grad=True)
            opt = Adam({"p": p}, lr=1e-3)
            p.grad = np.array(g, dtype=np.float32)
            opt.step()
            update = abs(float(p.data))
            assert abs(update - 1e-3) <= 1e-6 * 1e-3

    def test_identical_histories_identical_updates(self):
        a = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        b = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        opt = Adam({"a": a, "b": b}, lr=0.01)
        for g in (0.5, -1.0, 2.0):
            a.grad = np.array([g], dtype=np.float32)
            b.grad = np.array([g], dtype=np.float32)
            opt.step()
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(opt.m["a"], opt.m["b"])
        assert np.array_equal(opt.v["a"], opt.v["b"])

    def test_nonfinite_grad_aborts_cleanly(self):
        a = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        b = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        opt = Adam({"a": a, "b": b}, lr=0.1)
        a.grad = np.array([np.nan], dtype=np.float32)
        b.grad = np.array([1.0], dtype=np.float32)
        with pytest.raises(NumericError):
            opt.step()
        assert a.data[0] == 1.0 and b.data[0] == 1.0
        assert opt.t == 0
        assert np.all(opt.m["b"] == 0.0)


class TestCheckpointFormat:
    def test_save_load_save_byte_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "w": rng.normal(size=(3, 4)).astype(np.float32),
            "tau": np.asarray(0.07, dtype=np.float32),
            "v": rng.normal(size=7).astype(np.float32),
        }
        meta = {"kind": "teacher", "variant": "b", "step": 12}
        save_checkpoint(tmp_path / "a.dckp", meta, tensors)
        loaded_meta, loaded = load_checkpoint(tmp_path / "a.dckp")
        save_checkpoint(tmp_path / "b.dckp", loaded_meta, loaded)
        assert (tmp_path / "a.dckp").read_bytes() == (tmp_path / "b.dckp").read_bytes()
        assert loaded["tau"].shape == ()
        assert np.array_equal(loaded["w"], tensors["w"])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.dckp").write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(ParseError) as exc:
            load_checkpoint(tmp_path / "bad.dckp")
        assert exc.value.offset == 0

    def test_nonfinite_never_reaches_disk(self, tmp_path):
        path = tmp_path / "keep.dckp"
        save_checkpoint(path, {"ok": True}, {"w": np.ones(3, dtype=np.float32)})
        before = path.read_bytes()
        with pytest.raises(NumericError):
            save_checkpoint(path, {"ok": False}, {"w": np.array([np.inf], dtype=np.float32)})
        assert path.read_bytes() == before  # old checkpoint intact and loadable
        load_checkpoint(path)

    def test_golden_bytes(self, tmp_path):
        # freezes the layout: magic, u16 version, u32-prefixed JSON header,
        # then [u16 name len, name, u8 rank, u32 dims..., f32 payload] records
        save_checkpoint(
            tmp_path / "g.dckp",
            {"k": 1},
            {"w": np.array([1.5, -0.25], dtype=np.float32), "t": np.asarray(0.5, dtype=np.float32)},
        )
        golden = bytes.fromhex(
            "44434b500100080000007b226b223a20317d01007701020000000000c03f000080be010074000000003f"
        )
        assert (tmp_path / "g.dckp").read_bytes() == golden


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("train") / "tiny"
    gen_synthetic(SyntheticSpec(train_size=48, heldout_size=12, seed=7), path)
    return path


@pytest.fixture(scope="module")
def tiny_config():
    return TrainConfig.preset("b", seed=7, teacher_epochs=2, student_epochs=1)


@pytest.fixture(scope="module")
def tiny_prepared(tiny_dataset, tiny_config):
    return quiet_prepare(tiny_dataset, tiny_config)


class TestTeacherTraining:
    def test_zero_epochs_keeps_init(self, tiny_prepared, tiny_config):
        a = TeacherTrainer(tiny_prepared, tiny_config)
        init_digest = params_digest(a.checkpoint_tensors())
        a.train(0)
        assert params_digest(a.checkpoint_tensors()) == init_digest

    def test_zero_lr_keeps_params(self, tiny_prepared, tiny_config):
        import dataclasses

        cfg = dataclasses.replace(tiny_config, teacher_lr=0.0)
        trainer = TeacherTrainer(tiny_prepared, cfg)
        before = params_digest(trainer.checkpoint_tensors())
        trainer.run_epoch()
        assert params_digest(trainer.checkpoint_tensors()) == before

    def test_validation_loss_decreases(self, tiny_prepared, tiny_config):
        trainer = TeacherTrainer(tiny_prepared, tiny_config)
        trainer.train(2)
        vals = trainer.log.validation_totals()
        assert vals[-1] < vals[0]

    def test_encoders_frozen_through_training(self, tiny_prepared, tiny_config):
        text_digest = params_digest(tiny_prepared.text_enc.parameters())
        image_digest = params_digest(tiny_prepared.base_image_enc.parameters())
        trainer = TeacherTrainer(tiny_prepared, tiny_config)
        trainer.train(2)
        assert params_digest(tiny_prepared.text_enc.parameters()) == text_digest
        assert params_digest(tiny_prepared.base_image_enc.parameters()) == image_digest

    def test_deterministic_checkpoints_and_logs(self, tiny_dataset, tiny_config, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            train_teacher(tiny_dataset, tiny_config, out_dir=a_dir)
            train_teacher(tiny_dataset, tiny_config, out_dir=b_dir)
        for name in ("teacher.dckp", "teacher_log.csv", "teacher_val_log.csv"):
            assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()

    def test_step_log_header(self, tiny_prepared, tiny_config, tmp_path):
        trainer = TeacherTrainer(tiny_prepared, tiny_config)
        trainer.train(1)
        step_path, _ = trainer.log.write(tmp_path)
        assert step_path.read_text().splitlines()[0] == STEP_LOG_HEADER
        assert STEP_LOG_HEADER == "epoch,step,total,contrastive,cos_T,cos_I,anchor,tau_loss,tau_agg"


@pytest.fixture(scope="module")
def taught(tiny_prepared, tiny_config):
    trainer = TeacherTrainer(tiny_prepared, tiny_config)
    trainer.train(2)
    return trainer


class TestDistillation:

    def test_zero_epochs_anchor_exactly_zero(self, tiny_prepared, taught, tiny_config):
        import dataclasses

        cfg = dataclasses.replace(tiny_config, anchor_enabled=True)
        student = StudentTrainer(tiny_prepared, taught.fusion, cfg)
        components = student.validation_components()
        assert components["anchor"] == 0.0  # student bit-equals base before any step

    def test_teacher_and_text_frozen_during_distillation(self, tiny_prepared, taught, tiny_config):
        fusion_digest = params_digest({n: p for n, p in taught.fusion.parameters().items()})
        text_digest = params_digest(tiny_prepared.text_enc.parameters())
        student = StudentTrainer(tiny_prepared, taught.fusion, tiny_config)
        student.train(1)
        assert params_digest({n: p for n, p in taught.fusion.parameters().items()}) == fusion_digest
        assert params_digest(tiny_prepared.text_enc.parameters()) == text_digest

    def test_student_actually_moves(self, tiny_prepared, taught, tiny_config):
        student = StudentTrainer(tiny_prepared, taught.fusion, tiny_config)
        before = params_digest(student.checkpoint_tensors())
        student.train(1)
        assert params_digest(student.checkpoint_tensors()) != before

    def test_cos_i_decreases(self, tiny_prepared, taught, tiny_config):
        student = StudentTrainer(tiny_prepared, taught.fusion, tiny_config)
        student.train(1)
        rows = student.log.val_rows
        assert rows[-1][4] < rows[0][4]

    def test_variant_mismatch_rejected(self, tiny_dataset, tiny_prepared, taught, tiny_config, tmp_path):
        taught.save(tmp_path / "teacher.dckp")
        wrong = TrainConfig.preset("l", seed=7)
        with pytest.raises(ConfigError):
            load_teacher(tmp_path / "teacher.dckp", wrong)

    def test_checkpoint_round_trip_through_distill(self, tiny_dataset, taught, tiny_config, tmp_path, tiny_prepared):
        taught.save(tmp_path / "teacher.dckp")
        student, log = distill_student(
            tiny_dataset, tmp_path / "teacher.dckp", tiny_config, prepared=tiny_prepared
        )
        assert student.epochs_done == tiny_config.student_epochs
        fusion_loaded, _, meta = load_teacher(tmp_path / "teacher.dckp", tiny_config)
        assert meta["rng"]["teacher_epochs_done"] == 2
        assert params_digest({n: p for n, p in fusion_loaded.parameters().items()}) == params_digest(
            {n: p for n, p in taught.fusion.parameters().items()}
        )


class TestSweep:
    def test_single_row(self, tiny_dataset, tiny_config):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rows = epoch_sweep(tiny_dataset, tiny_config, 1)
        assert len(rows) == 1
        assert rows[0][0] == 0

    def test_epoch_zero_retention_exactly_one(self, tiny_dataset, tiny_config):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rows = epoch_sweep(tiny_dataset, tiny_config, 2)
        assert rows[0][2] == 1.0
        assert len(rows) == 2

    def test_retention_proxy_self_is_one(self):
        rows = np.random.default_rng(0).normal(size=(5, 8)).astype(np.float32)
        assert retention_proxy(rows, rows.copy()) == 1.0


class TestVariantL:
    def test_full_cycle_with_rotary_clusters_and_anchor(self, tmp_path):
        # the large-model recipe: rotary positions, 3-cluster aggregation,
        # and the preservation anchor, exercised end to end at toy scale
        gen_synthetic(SyntheticSpec(train_size=40, heldout_size=8, seed=3), tmp_path / "d")
        cfg = TrainConfig.preset("l", seed=3, batch_size=16, student_epochs=1)
        prepared = quiet_prepare(tmp_path / "d", cfg)
        assert prepared.base_image_enc.config.position_mode == "rotary"
        assert prepared.base_image_enc.config.embed_dim == 768

        teacher = TeacherTrainer(prepared, cfg)
        teacher.train(cfg.teacher_epochs)
        vals = teacher.log.validation_totals()
        assert vals[-1] < vals[0]

        student = StudentTrainer(prepared, teacher.fusion, cfg)
        student.train(cfg.student_epochs)
        final = student.log.val_rows[-1]
        assert final[5] > 0.0  # anchor engaged once the student moves
        assert final[4] < student.log.val_rows[0][4]  # cos_I still improves


class TestPreparation:
    def test_missing_dataset(self, tmp_path, tiny_config):
        with pytest.raises((InputError, FileNotFoundError)):
            prepare_data(tmp_path / "nope", tiny_config)

    def test_needs_full_batch(self, tmp_path):
        gen_synthetic(SyntheticSpec(train_size=20, heldout_size=4, seed=1), tmp_path / "small")
        cfg = TrainConfig.preset("b", seed=1)  # batch_size 32 > 18 usable
        with pytest.raises(InputError):
            quiet_prepare(tmp_path / "small", cfg)

    def test_validation_is_last_tenth(self, tiny_prepared):
        assert len(tiny_prepared.val) == max(2, 48 // 10)
        assert [s.id for s in tiny_prepared.val] == [f"train_{i:05d}" for i in range(44, 48)]
