"""Tests for the optimizer, checkpoints, the training loop and evaluation."""

import dataclasses
import math

import numpy as np
import pytest

from allweather.config import Config, ScheduleConfig, TracingConfig, TrainingConfig
from allweather.errors import (
    ContractError,
    FormatError,
    InputError,
    NonFiniteError,
    TruncatedFileError,
)
from allweather.nn import RestorationNet
from allweather.tensor import Tensor
from allweather.tracing import Tracer
from allweather.training import (
    Adam,
    Checkpoint,
    Trainer,
    clip_grad_norm,
    evaluate,
    global_grad_norm,
    load_checkpoint,
    lr_at,
    save_checkpoint,
)
from allweather.training.trainer import LOG_HEADER
from allweather.weather import Manifest, gen_dataset


def params(**arrays):
    return {name: Tensor(value, requires_grad=True, name=name) for name, value in arrays.items()}


def with_training(config: Config, **changes) -> Config:
    return dataclasses.replace(config, training=dataclasses.replace(config.training, **changes))


class TestAdam:
    """Bias-corrected Adam updates."""

    def test_first_step_moves_by_lr(self):
        """Test that the first update is lr * sign(grad)."""
        p = params(w=np.ones(3, dtype=np.float32))
        p["w"].grad = np.array([0.3, -2.0, 1e-3], dtype=np.float32)

        Adam(p, lr=2e-4).step()

        np.testing.assert_allclose(p["w"].data, [0.9998, 1.0002, 0.9998], rtol=1e-6)

    def test_zero_gradient_leaves_params(self):
        p = params(w=np.full(4, 0.5, dtype=np.float32))
        p["w"].grad = np.zeros(4, dtype=np.float32)

        Adam(p).step()

        np.testing.assert_array_equal(p["w"].data, np.full(4, 0.5, dtype=np.float32))

    def test_deterministic_over_ten_steps(self):
        grads = np.random.default_rng(0).normal(size=(10, 5)).astype(np.float32)
        results = []
        for _ in range(2):
            p = params(w=np.zeros(5, dtype=np.float32))
            optimizer = Adam(p, lr=1e-2)
            for grad in grads:
                p["w"].grad = grad.copy()
                optimizer.step()
            results.append(p["w"].data.copy())

        np.testing.assert_array_equal(results[0], results[1])
        assert results[0].dtype == np.float32

    def test_missing_gradient(self):
        p = params(w=np.zeros(2), b=np.zeros(2))
        p["w"].grad = np.ones(2)

        with pytest.raises(ContractError, match="'b' has no gradient"):
            Adam(p).step()

    def test_state_roundtrip(self):
        p = params(w=np.zeros(3, dtype=np.float32))
        optimizer = Adam(p)
        p["w"].grad = np.ones(3, dtype=np.float32)
        optimizer.step()

        restored = Adam(p)
        restored.load_state_tensors(optimizer.state_tensors(), optimizer.state.step)

        assert restored.state.step == 1
        np.testing.assert_array_equal(restored.state.m["w"], optimizer.state.m["w"])

    def test_state_missing_key(self):
        with pytest.raises(FormatError, match="missing 'v/w'"):
            Adam(params(w=np.zeros(2))).load_state_tensors({"m/w": np.zeros(2)}, 1)


class TestSchedule:
    """Step-halving learning rate."""

    @pytest.mark.parametrize(
        "epoch,expected",
        [(0, 2e-4), (99, 2e-4), (100, 1e-4), (149, 1e-4), (150, 5e-5), (199, 5e-5)],
    )
    def test_default_schedule(self, epoch, expected):
        assert lr_at(epoch, ScheduleConfig()) == pytest.approx(expected)

    @pytest.mark.parametrize("epoch", [-1, 200])
    def test_out_of_range(self, epoch):
        with pytest.raises(InputError, match="outside"):
            lr_at(epoch, ScheduleConfig())


class TestClipping:
    """Global gradient-norm clipping."""

    def test_clips_to_max_norm(self):
        p = params(a=np.zeros(1), b=np.zeros(1))
        p["a"].grad, p["b"].grad = np.array([3.0]), np.array([4.0])

        norm = clip_grad_norm(p, 1.0)

        assert norm == pytest.approx(5.0)
        assert global_grad_norm(p) == pytest.approx(1.0)
        np.testing.assert_allclose([p["a"].grad[0], p["b"].grad[0]], [0.6, 0.8])

    def test_small_gradients_untouched(self):
        p = params(a=np.zeros(2))
        p["a"].grad = np.array([0.1, 0.2])

        clip_grad_norm(p, 1.0)

        np.testing.assert_array_equal(p["a"].grad, [0.1, 0.2])


class TestCheckpoint:
    """Binary checkpoint files."""

    def make(self) -> Checkpoint:
        rng = np.random.default_rng(0)
        return Checkpoint(
            params={
                "a.weight": rng.random((2, 3)).astype(np.float32),
                "a.bias": np.zeros(3, np.float32),
            },
            optimizer={"m/a.weight": rng.random((2, 3)).astype(np.float32)},
            step=42,
        )

    def test_roundtrip(self, tmp_path):
        original = self.make()

        loaded = load_checkpoint(save_checkpoint(tmp_path / "m.twckpt", original))

        assert loaded.step == 42
        assert list(loaded.params) == ["a.weight", "a.bias"]
        for name, array in original.params.items():
            np.testing.assert_array_equal(loaded.params[name], array)
        moment = loaded.optimizer["m/a.weight"]
        np.testing.assert_array_equal(moment, original.optimizer["m/a.weight"])
        assert loaded.num_params == 9

    def test_network_state_roundtrip(self, tmp_path, small_cfg):
        net = RestorationNet(small_cfg, seed=1)
        save_checkpoint(tmp_path / "n.twckpt", Checkpoint(params=net.store.state()))

        other = RestorationNet(small_cfg, seed=2)
        other.store.load_state(load_checkpoint(tmp_path / "n.twckpt").params)

        for name in net.store:
            np.testing.assert_array_equal(other.store[name].data, net.store[name].data)

    def test_corrupted_magic(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.twckpt", self.make())
        path.write_bytes(b"X" + path.read_bytes()[1:])

        with pytest.raises(FormatError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.twckpt", self.make())
        raw = bytearray(path.read_bytes())
        raw[6] = 9
        path.write_bytes(bytes(raw))

        with pytest.raises(FormatError, match="version 9"):
            load_checkpoint(path)

    @pytest.mark.parametrize("keep", [1, 3, 8, 60, 130])
    def test_truncated(self, tmp_path, keep):
        path = save_checkpoint(tmp_path / "m.twckpt", self.make())
        path.write_bytes(path.read_bytes()[:keep])

        with pytest.raises(TruncatedFileError):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.twckpt", self.make())
        path.write_bytes(path.read_bytes() + b"\x00\x01")

        with pytest.raises(TruncatedFileError, match="2 unexpected bytes"):
            load_checkpoint(path)

    def test_shape_mismatch_on_load(self, small_cfg):
        net = RestorationNet(small_cfg)
        state = net.store.state()
        state["tail.conv4.bias"] = np.zeros(7, np.float32)

        with pytest.raises(ContractError, match="tail.conv4.bias"):
            net.store.load_state(state)


class TestTrainer:
    """The seeded training loop."""

    def test_split_must_leave_training_data(self, train_config, tiny_manifest):
        config = with_training(train_config, val_fraction=0.9)

        with pytest.raises(InputError, match="training split is empty"):
            Trainer(config, tiny_manifest)

    def test_runs_are_deterministic(self, train_config, tiny_manifest, tmp_path):
        """Test that two runs produce identical losses and identical logs."""
        config = with_training(train_config, max_steps=4)
        logs = []
        losses = []
        for name in ("a", "b"):
            trainer = Trainer(config, tiny_manifest)
            trainer.fit(log_path=tmp_path / f"{name}.tsv")
            logs.append((tmp_path / f"{name}.tsv").read_text())
            losses.append(trainer.step_losses)

        assert len(losses[0]) == 4
        assert losses[0] == losses[1]
        assert logs[0] == logs[1]

    def test_log_format(self, train_config, tiny_manifest, tmp_path):
        config = with_training(train_config, max_steps=3)
        trainer = Trainer(config, tiny_manifest)

        records = trainer.fit(out_checkpoint=tmp_path / "m.twckpt", log_path=tmp_path / "log.tsv")

        lines = (tmp_path / "log.tsv").read_text().splitlines()
        assert lines[0] == LOG_HEADER
        assert [r.step for r in records] == [2, 3]
        assert lines[1].split("\t")[:3] == ["0", "2", "0.0002"]
        assert lines[1].split("\t")[4] == "nan"
        assert load_checkpoint(tmp_path / "m.twckpt").step == 3

    def test_resume_continues_exactly(self, train_config, tiny_manifest, tmp_path):
        """Test that stop-at-3 plus resume reproduces step 4 of an uninterrupted run."""
        first = Trainer(with_training(train_config, max_steps=3), tiny_manifest)
        first.fit(out_checkpoint=tmp_path / "a.twckpt")

        straight = Trainer(with_training(train_config, max_steps=4), tiny_manifest)
        straight.fit()

        resumed = Trainer(with_training(train_config, max_steps=4), tiny_manifest)
        resumed.resume(tmp_path / "a.twckpt")
        resumed.fit()

        assert first.step_losses == straight.step_losses[:3]
        assert resumed.step_losses == [straight.step_losses[3]]
        for name in straight.net.store:
            expected = straight.net.store[name].data
            np.testing.assert_array_equal(resumed.net.store[name].data, expected)

    def test_queries_receive_gradient_and_move(self, train_config, tiny_manifest):
        """Test that one optimizer step reaches the weather-query embeddings."""
        trainer = Trainer(train_config, tiny_manifest)
        queries = trainer.net.store["decoder.queries"]
        before = queries.data.copy()

        trainer.train_step(trainer.epoch_batches(0)[0], lr=train_config.schedule.base_lr)

        assert np.any(queries.grad != 0)
        assert np.max(np.abs(queries.data - before)) > 0

    def test_epoch_order_is_seeded(self, train_config, tiny_manifest):
        trainer = Trainer(train_config, tiny_manifest)

        first = [b.tolist() for b in trainer.epoch_batches(0)]

        assert first == [b.tolist() for b in Trainer(train_config, tiny_manifest).epoch_batches(0)]
        assert sorted(i for batch in first for i in batch) == [0, 1, 2, 3]

    def test_non_finite_names_first_op(self, train_config, tiny_manifest):
        """Test that a NaN parameter is traced to the op that first produced it."""
        trainer = Trainer(train_config, tiny_manifest)
        trainer.net.store["encoder.stage1.merge.proj.weight"].data[0, 0, 0, 0] = np.nan

        with pytest.raises(NonFiniteError, match=r"'conv2d' output \(node \d+\) at step 1"):
            trainer.train_step(trainer.epoch_batches(0)[0], 1e-3)

    def test_validation_psnr(self, train_config, tiny_manifest):
        config = with_training(train_config, val_fraction=0.25, max_steps=1)
        trainer = Trainer(config, tiny_manifest)

        records = trainer.fit()

        assert len(trainer.val_x) == 1
        assert math.isfinite(records[-1].val_psnr)

    def test_ablation_trains(self, train_config, tiny_manifest):
        config = dataclasses.replace(train_config, network=train_config.network.ablation("base"))
        trainer = Trainer(with_training(config, max_steps=2), tiny_manifest)

        trainer.fit()

        assert trainer.step == 2
        assert all(math.isfinite(v) for v in trainer.step_losses)


class FakeTrace:
    def __init__(self):
        self.events = []
        self.scores = []

    def event(self, name, metadata, level):
        self.events.append((name, metadata))

    def score(self, name, value, comment=None):
        self.scores.append((name, value))


class FakeLangfuse:
    def __init__(self):
        self.traces = []
        self.flushed = 0

    def trace(self, name, metadata):
        trace = FakeTrace()
        self.traces.append((name, metadata, trace))
        return trace

    def flush(self):
        self.flushed += 1


class TestTracing:
    """Langfuse tracing around training runs."""

    def test_disabled_tracer_is_noop(self):
        tracer = Tracer(TracingConfig(enabled=False))

        with tracer.trace("train") as trace:
            tracer.event("epoch")
            tracer.score("loss", 1.0)

        assert trace is None
        assert not tracer.enabled

    def test_training_run_is_traced(self, train_config, tiny_manifest, monkeypatch):
        client = FakeLangfuse()
        monkeypatch.setattr("allweather.tracing._langfuse_client", client)
        config = with_training(train_config, max_steps=4)

        Trainer(config, tiny_manifest).fit()

        [(name, metadata, trace)] = client.traces
        assert name == "train"
        assert metadata["train_pairs"] == 4
        assert [e[0] for e in trace.events] == ["epoch", "epoch"]
        assert [s[0] for s in trace.scores] == ["loss"]
        assert client.flushed == 1


class TestEvaluate:
    """Per-kind quality tables."""

    def test_degraded_only(self, tiny_manifest):
        results = evaluate(tiny_manifest)

        assert list(results) == ["raindrop", "rain_fog", "snow", "overall"]
        assert results["overall"]["count"] == 4
        assert set(results["overall"]) == {"count", "psnr_degraded", "ssim_degraded"}
        assert all(r["ssim_degraded"] <= 1 for r in results.values())

    def test_with_network(self, tiny_manifest, small_cfg):
        results = evaluate(tiny_manifest, RestorationNet(small_cfg))

        assert {"psnr_restored", "ssim_restored"} <= set(results["snow"])

    def test_clean_pairs_are_perfect(self, tmp_path):
        gen_dataset(count=2, mix="uniform", seed=0, out_dir=tmp_path, size=16)
        manifest = Manifest.load(tmp_path)
        for row in manifest:
            row.degraded_path = row.clean_path

        results = evaluate(manifest)

        assert results["overall"]["psnr_degraded"] == math.inf
        assert results["overall"]["ssim_degraded"] == pytest.approx(1.0)


@pytest.mark.slow
class TestOverfit:
    """End-to-end: the toy network learns to undo synthetic weather."""

    def test_eight_pairs_two_thousand_steps(self, tmp_path):
        gen_dataset(count=8, mix="uniform", seed=0, out_dir=tmp_path, size=64)
        manifest = Manifest.load(tmp_path)
        config = Config(
            schedule=ScheduleConfig(
                base_lr=1e-3, halve_epochs=[500, 750], total_epochs=1000, batch_size=4
            ),
            training=TrainingConfig(val_fraction=0.0, max_steps=2000),
        )
        trainer = Trainer(config, manifest)

        trainer.fit()

        results = evaluate(manifest, trainer.net)["overall"]
        assert results["psnr_restored"] >= results["psnr_degraded"] + 5.0
        assert np.mean(trainer.step_losses[-10:]) < 0.2 * trainer.step_losses[0]
