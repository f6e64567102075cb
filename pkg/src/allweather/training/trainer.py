"""Training loop, validation and dataset evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from allweather.config.models import KINDS, Config
from allweather.errors import InputError, NonFiniteError
from allweather.losses import RestorationLoss
from allweather.metrics import format_value, psnr, ssim
from allweather.nn.network import RestorationNet, from_network_range, restore_image, to_network_range
from allweather.tensor import Graph, Tensor, backward
from allweather.tracing import Tracer
from allweather.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from allweather.training.optim import Adam, clip_grad_norm, lr_at
from allweather.weather.dataset import Manifest

logger = logging.getLogger(__name__)

LOG_HEADER = "epoch\tstep\tlr\tloss\tval_psnr"


@dataclass
class EpochRecord:
    epoch: int
    step: int
    lr: float
    loss: float
    val_psnr: float

    def to_line(self) -> str:
        fields = [str(self.epoch), str(self.step), f"{self.lr:.8g}", f"{self.loss:.6f}"]
        return "\t".join([*fields, format_value(self.val_psnr)])


def _stack(manifest: Manifest) -> tuple[np.ndarray, np.ndarray]:
    """Load every pair as ``(degraded, clean)`` batches in network range."""
    if len(manifest) == 0:
        return np.zeros((0, 3, 1, 1), np.float32), np.zeros((0, 3, 1, 1), np.float32)
    clean, degraded = zip(*(manifest.load_pair(row) for row in manifest))
    return (
        to_network_range(np.stack(degraded)).astype(np.float32),
        to_network_range(np.stack(clean)).astype(np.float32),
    )


class Trainer:
    """Seeded mini-batch training of :class:`RestorationNet` on a manifest.

    Every run is a pure function of (config, dataset bytes): batch order for
    epoch ``e`` comes from ``SeedSequence([seed, e])`` and the optimizer step
    counter locates the position inside an epoch when resuming.
    """

    def __init__(self, config: Config, manifest: Manifest, tracer: Tracer | None = None):
        self.config = config
        self.schedule = config.schedule
        self.tracer = tracer or Tracer(config.tracing)
        self.net = RestorationNet(config.network, seed=config.training.seed)
        self.loss_fn = RestorationLoss(config.loss)
        self.optimizer = Adam(self.net.store, lr=self.schedule.base_lr)

        train_set, val_set = manifest.split(config.training.val_fraction)
        if len(train_set) == 0:
            raise InputError("training split is empty; lower training.val_fraction or add pairs")
        self.train_x, self.train_y = _stack(train_set)
        self.val_x, self.val_y = _stack(val_set)
        self.net.validate(*self.train_x.shape[2:])
        self.step_losses: list[float] = []
        self.records: list[EpochRecord] = []

    @property
    def step(self) -> int:
        return self.optimizer.state.step

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.train_x) / self.schedule.batch_size)

    def resume(self, path: Path | str) -> None:
        checkpoint = load_checkpoint(path)
        self.net.store.load_state(checkpoint.params)
        self.optimizer.load_state_tensors(checkpoint.optimizer, checkpoint.step)
        logger.info("Resumed from %s at step %d", path, checkpoint.step)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            params=self.net.store.state(),
            optimizer={k: v.copy() for k, v in self.optimizer.state_tensors().items()},
            step=self.step,
        )

    def epoch_batches(self, epoch: int) -> list[np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence([self.config.training.seed, epoch]))
        order = rng.permutation(len(self.train_x))
        size = self.schedule.batch_size
        return [order[i : i + size] for i in range(0, len(order), size)]

    def train_step(self, indices: np.ndarray, lr: float) -> float:
        self.optimizer.zero_grad()
        x = Tensor(self.train_x[indices])
        y = Tensor(self.train_y[indices])
        with Graph() as graph:
            loss = self.loss_fn(self.net(x), y)
            value = loss.item()
            if not math.isfinite(value):
                node = graph.first_non_finite()
                where = f"'{node.op}' output (node {node.output.node_id})" if node else "the loss"
                graph.clear()
                raise NonFiniteError(
                    f"non-finite value first produced by {where} at step {self.step + 1}"
                )
            backward(loss)
        clip = self.config.training.clip_norm
        if clip is not None:
            clip_grad_norm(self.net.store, clip)
        self.optimizer.step(lr)
        self.step_losses.append(value)
        return value

    def validate(self) -> float:
        """Mean PSNR of restored validation images against their clean targets."""
        if len(self.val_x) == 0:
            return math.nan
        restored = restore_image(self.net, from_network_range(self.val_x))
        clean = from_network_range(self.val_y)
        return float(np.mean([psnr(r, c) for r, c in zip(restored, clean)]))

    def fit(
        self, out_checkpoint: Path | str | None = None, log_path: Path | str | None = None
    ) -> list[EpochRecord]:
        """Train until ``total_epochs`` or ``max_steps``; returns one record per epoch run."""
        metadata = {
            "train_pairs": len(self.train_x),
            "val_pairs": len(self.val_x),
            "params": self.net.store.num_params(),
            "start_step": self.step,
        }
        logger.info(
            "Training %d params on %d pairs (%d held out), %d steps/epoch",
            metadata["params"], metadata["train_pairs"], metadata["val_pairs"], self.steps_per_epoch,
        )
        with self.tracer.trace("train", metadata=metadata):
            self._run_epochs(out_checkpoint, log_path)
            if out_checkpoint is not None:
                save_checkpoint(out_checkpoint, self.checkpoint())
            if self.records:
                last = self.records[-1]
                self.tracer.record_metrics({"loss": last.loss, "val_psnr": last.val_psnr})
        return self.records

    def _run_epochs(self, out_checkpoint: Path | str | None, log_path: Path | str | None) -> None:
        max_steps = self.config.training.max_steps
        every = self.config.training.checkpoint_every
        start_epoch, skip = divmod(self.step, self.steps_per_epoch)
        for epoch in range(start_epoch, self.schedule.total_epochs):
            if max_steps is not None and self.step >= max_steps:
                return
            lr = lr_at(epoch, self.schedule)
            losses = []
            for indices in self.epoch_batches(epoch)[skip:]:
                if max_steps is not None and self.step >= max_steps:
                    break
                losses.append(self.train_step(indices, lr))
            skip = 0
            record = EpochRecord(epoch, self.step, lr, float(np.mean(losses)), self.validate())
            self.records.append(record)
            logger.info("epoch %d step %d lr %.3g loss %.5f val_psnr %s",
                        epoch, record.step, lr, record.loss, format_value(record.val_psnr))
            self.tracer.record_epoch(record)
            if log_path is not None:
                write_training_log(log_path, self.records)
            if out_checkpoint is not None and every and (epoch + 1) % every == 0:
                save_checkpoint(out_checkpoint, self.checkpoint())


def write_training_log(path: Path | str, records: list[EpochRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join([LOG_HEADER, *(r.to_line() for r in records)]) + "\n")


def evaluate(manifest: Manifest, net: RestorationNet | None = None) -> dict[str, dict[str, float]]:
    """PSNR/SSIM of degraded (and, with ``net``, restored) images per kind and overall.

    Returns ``{group: {metric: value}}`` with groups ordered as the known
    kinds present, then ``overall``.
    """
    per_row: dict[str, list[dict[str, float]]] = {}
    for row in manifest:
        clean, degraded = manifest.load_pair(row)
        scores = {"psnr_degraded": psnr(degraded, clean), "ssim_degraded": ssim(degraded, clean)}
        if net is not None:
            restored = restore_image(net, degraded)
            scores["psnr_restored"] = psnr(restored, clean)
            scores["ssim_restored"] = ssim(restored, clean)
        per_row.setdefault(row.kind, []).append(scores)

    def summarize(rows: list[dict[str, float]]) -> dict[str, float]:
        summary = {"count": float(len(rows))}
        for key in rows[0]:
            summary[key] = float(np.mean([r[key] for r in rows]))
        return summary

    results = {kind: summarize(per_row[kind]) for kind in KINDS if kind in per_row}
    everything = [r for kind in results for r in per_row[kind]]
    if everything:
        results["overall"] = summarize(everything)
    return results
