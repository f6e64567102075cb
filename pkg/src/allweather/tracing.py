"""Optional Langfuse tracing of training and evaluation runs."""

from __future__ import annotations

import atexit
import logging
import math
from contextlib import contextmanager
from typing import TYPE_CHECKING, Any, Iterator, Mapping

if TYPE_CHECKING:
    from langfuse import Langfuse
    from langfuse.client import StatefulTraceClient

    from allweather.config import TracingConfig
    from allweather.training.trainer import EpochRecord

logger = logging.getLogger(__name__)

# Shared by every Tracer in the process
_langfuse_client: Langfuse | None = None


def init_langfuse(config: TracingConfig) -> Langfuse | None:
    """Return the process-wide Langfuse client, or None when tracing is off."""
    global _langfuse_client
    if _langfuse_client is None and config.is_configured():
        try:
            from langfuse import Langfuse

            _langfuse_client = Langfuse(
                public_key=config.get_public_key(),
                secret_key=config.get_secret_key(),
                host=config.host,
            )
        except Exception as e:
            logger.warning("Langfuse tracing disabled: %s", e)
            return None
        atexit.register(_flush_at_exit)
        logger.debug("Langfuse tracing to %s", config.host)
    return _langfuse_client


def _flush_at_exit() -> None:
    if _langfuse_client is None:
        return
    try:
        _langfuse_client.flush()
    except Exception:
        pass


class Tracer:
    """One trace per run: an event per epoch, final metrics as scores.

    Without a configured client every method does nothing.
    """

    def __init__(self, config: TracingConfig):
        self.config = config
        self.client = init_langfuse(config)
        self._run: StatefulTraceClient | None = None

    @property
    def enabled(self) -> bool:
        return self.client is not None

    def _active(self) -> StatefulTraceClient | None:
        return self._run if self.enabled else None

    @contextmanager
    def trace(self, name: str, metadata: dict[str, Any] | None = None) -> Iterator[Any]:
        """Trace the enclosed run as ``name`` (``"train"`` or ``"eval"``)."""
        if not self.enabled:
            yield None
            return
        self._run = self.client.trace(name=name, metadata=metadata or {})
        try:
            yield self._run
        finally:
            self._run = None
            self.client.flush()

    def event(self, name: str, metadata: dict[str, Any] | None = None) -> None:
        run = self._active()
        if run is not None:
            run.event(name=name, metadata=metadata or {}, level="DEFAULT")

    def score(self, name: str, value: float, comment: str | None = None) -> None:
        run = self._active()
        if run is not None:
            run.score(name=name, value=value, comment=comment)

    def record_epoch(self, record: EpochRecord) -> None:
        self.event("epoch", {
            "epoch": record.epoch,
            "step": record.step,
            "lr": record.lr,
            "loss": record.loss,
            "val_psnr": record.val_psnr if math.isfinite(record.val_psnr) else None,
        })

    def record_metrics(self, metrics: Mapping[str, float]) -> None:
        """Score every finite metric; inf/nan are left out."""
        for name, value in metrics.items():
            if math.isfinite(value):
                self.score(name, float(value))
