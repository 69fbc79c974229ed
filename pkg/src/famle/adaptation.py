"""Online adaptation: sliding observation window, prior selection and k-step fine-tuning."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError
from .model import (EmbeddingTable, InnerUpdateConfig, ModelParams, Transition, TransitionDataset,
                    inner_update_U, nll_loss)


class ObservationWindow:
    """FIFO buffer of the ``M`` most recent transitions."""

    def __init__(self, M: int, state_dim: int | None = None, action_dim: int | None = None):
        if M < 1:
            raise ConfigurationError("window size M must be >= 1")
        self.M = M
        self.state_dim = state_dim
        self.action_dim = action_dim
        self._buffer = deque(maxlen=M)

    def push(self, transition: Transition) -> "ObservationWindow":
        state = np.asarray(transition.state, dtype=float)
        action = np.atleast_1d(np.asarray(transition.action, dtype=float))
        if self.state_dim is None:
            self.state_dim, self.action_dim = len(state), len(action)
        if len(state) != self.state_dim or len(action) != self.action_dim:
            raise ConfigurationError("transition dimensions do not match the window")
        self._buffer.append(Transition(state, action, np.asarray(transition.next_state, dtype=float)))
        return self

    def __len__(self) -> int:
        return len(self._buffer)

    def __iter__(self):
        return iter(self._buffer)

    def transitions(self) -> list:
        return list(self._buffer)

    def dataset(self) -> TransitionDataset:
        return TransitionDataset.from_transitions(self._buffer, self.state_dim, self.action_dim)


def window_push(window: ObservationWindow, transition: Transition) -> ObservationWindow:
    """Append ``transition``; the oldest entry is evicted once the window exceeds ``M``."""
    return window.push(transition)


@dataclass
class AdaptedModel:
    theta_star: ModelParams
    h_star: np.ndarray
    source_index: int
    window_size_at_adaptation: int
    pre_loss: float = float("nan")
    post_loss: float = float("nan")
    embedding_losses: tuple = ()


def _as_dataset(window) -> TransitionDataset:
    return window.dataset() if isinstance(window, ObservationWindow) else window


def embedding_losses(theta_meta: ModelParams, table: EmbeddingTable, window) -> np.ndarray:
    """Loss of the window under ``theta_meta`` for every embedding in the table."""
    data = _as_dataset(window)
    if len(data) == 0:
        raise UsageError("cannot select an embedding from an empty window")
    return np.array([nll_loss(theta_meta, table[i], data) for i in range(len(table))])


def argmin_lowest(losses) -> int:
    """Index of the smallest loss; ties go to the lowest index, NaN never wins."""
    losses = np.asarray(losses, dtype=float)
    return int(np.argmin(np.where(np.isnan(losses), np.inf, losses)))


def select_embedding(theta_meta: ModelParams, table: EmbeddingTable, window) -> int:
    """Index of the most likely embedding for the window (lowest loss, lowest index on ties)."""
    return argmin_lowest(embedding_losses(theta_meta, table, window))


@dataclass(frozen=True)
class AdaptationConfig:
    """Online adaptation schedule: window size ``M`` and re-adaptation cadence ``K``."""

    inner: InnerUpdateConfig = InnerUpdateConfig()
    window_size: int = 64
    adapt_every: int = 10
    warm_start: bool = False

    def __post_init__(self):
        if self.window_size < 1 or self.adapt_every < 1:
            raise ConfigurationError("window_size and adapt_every must be >= 1")


def adapt(theta_meta: ModelParams, table: EmbeddingTable, window, cfg: InnerUpdateConfig,
          rng: np.random.Generator | None = None) -> AdaptedModel:
    """Select the most likely prior and run ``cfg.k`` joint SGD steps from it.

    Always restarts from ``theta_meta``.  Diverged updates propagate as
    :class:`famle.errors.DivergedUpdateError`.
    """
    data = _as_dataset(window)
    losses = embedding_losses(theta_meta, table, data)
    idx = argmin_lowest(losses)
    h = table[idx]
    if rng is None:
        rng = np.random.default_rng(0)
    theta_star, h_star = inner_update_U(theta_meta, h, data, cfg, rng)
    return AdaptedModel(theta_star, h_star, idx, len(data), float(losses[idx]),
                        nll_loss(theta_star, h_star, data), tuple(float(x) for x in losses))
