"""
Progress callback interface for runs.

Separates the training/evaluation logic from how progress is shown.
"""

from typing import Any, Dict, Optional

from tqdm import tqdm

from .log import get_logger

logger = get_logger("run")


class RunCallback:
    """Callback interface for run progress updates."""

    def on_start(self, info: Dict[str, Any]) -> None:
        """Called when a run (one seed) starts."""
        pass

    def on_phase_start(self, phase: str, total_items: int) -> None:
        """Called when starting a phase (data generation, training, evaluation)."""
        pass

    def on_progress(self, current: int, total: int, message: str = "") -> None:
        """Called to report progress within a phase."""
        pass

    def on_step(self, step: int, lr: float, loss: float) -> None:
        """Called after every training step."""
        pass

    def on_eval(self, step: int, metrics: Dict[str, float]) -> None:
        """Called when an evaluation finishes."""
        pass

    def on_complete(self, summary: Dict[str, Any]) -> None:
        """Called when the run is complete."""
        pass

    def on_error(self, error: str, details: str = "") -> None:
        """Called when an error occurs."""
        pass


class ConsoleCallback(RunCallback):
    """Log lines plus a tqdm bar per phase."""

    def __init__(self, verbose: bool = True, log_every: int = 10):
        self.verbose = verbose
        self.log_every = max(1, log_every)
        self._bar: Optional[tqdm] = None

    def _close_bar(self) -> None:
        if self._bar is not None:
            self._bar.close()
            self._bar = None

    def on_start(self, info: Dict[str, Any]) -> None:
        logger.info(f"Run start: seed {info.get('seed')} ({info.get('regime')}, {info.get('total_steps')} steps)")

    def on_phase_start(self, phase: str, total_items: int) -> None:
        self._close_bar()
        logger.info(f"{phase} ({total_items})")
        self._bar = tqdm(total=total_items, desc=phase, disable=not self.verbose, leave=False)

    def on_progress(self, current: int, total: int, message: str = "") -> None:
        if self._bar is not None:
            self._bar.n = current
            self._bar.set_postfix_str(message, refresh=True)

    def on_step(self, step: int, lr: float, loss: float) -> None:
        if self._bar is not None:
            self._bar.update(1)
            self._bar.set_postfix(loss=f"{loss:.4f}", lr=f"{lr:.4f}")
        if step % self.log_every == 0:
            logger.debug(f"step {step}: loss {loss:.6f} lr {lr:.6f}")

    def on_eval(self, step: int, metrics: Dict[str, float]) -> None:
        text = ", ".join(f"{k} {v:.4f}" for k, v in sorted(metrics.items()))
        logger.info(f"Eval at step {step}: {text}")

    def on_complete(self, summary: Dict[str, Any]) -> None:
        self._close_bar()
        logger.info(f"Run complete in {summary.get('wall_clock', 0.0):.1f}s")

    def on_error(self, error: str, details: str = "") -> None:
        self._close_bar()
        logger.error(f"{error} {details}".strip())
