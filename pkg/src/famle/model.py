"""Embedding-conditioned MLP dynamics model.

The network maps ``(state, action, embedding)`` to the mean of the next-state
delta.  Hidden layers use ``tanh``, the output layer is linear.  The loss is the
Gaussian negative log-likelihood with a fixed diagonal variance ``sigma^2`` and
constants dropped::

    L = mean_n  0.5 * || ((s' - s) - f(s, a, h)) / sigma ||^2

``sigma`` is the delta scale stored in the model's :class:`Normalizer`; it is 1
for the identity normalizer, which gives the plain unit-variance form.

Backpropagation is written out by hand for the fixed affine/tanh chain, so the
gradient with respect to the embedding input is available alongside the
parameter gradients.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DivergedUpdateError, InputError, UsageError

DEFAULT_BATCH_SIZE = 256
EMBEDDING_INIT_STD = 0.1


def wrap_angle(x):
    """Wrap angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - x, 2.0 * np.pi)


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray


class TransitionDataset:
    """Ordered (s, a, s') tuples stored as three aligned arrays."""

    def __init__(self, states, actions, next_states, situation_index=None):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
        actions = np.asarray(actions, dtype=float)
        if actions.ndim == 1:
            actions = actions.reshape(len(states), -1)
        if not (len(states) == len(actions) == len(next_states)):
            raise ConfigurationError("states, actions and next_states differ in length")
        if states.shape != next_states.shape:
            raise ConfigurationError("state and next_state dimensions differ")
        self.states = states
        self.actions = actions
        self.next_states = next_states
        self.situation_index = situation_index
        # derived arrays; datasets are treated as immutable once built
        self._features = None
        self._targets = None

    @classmethod
    def from_transitions(cls, transitions: Iterable[Transition], state_dim=None,
                         action_dim=None, situation_index=None):
        transitions = list(transitions)
        if not transitions:
            if state_dim is None or action_dim is None:
                raise UsageError("empty dataset needs explicit dimensions")
            return cls(np.zeros((0, state_dim)), np.zeros((0, action_dim)),
                       np.zeros((0, state_dim)), situation_index)
        return cls(np.array([t.state for t in transitions], dtype=float),
                   np.array([np.atleast_1d(t.action) for t in transitions], dtype=float),
                   np.array([t.next_state for t in transitions], dtype=float),
                   situation_index)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i) -> Transition:
        return Transition(self.states[i], self.actions[i], self.next_states[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, index) -> "TransitionDataset":
        index = np.asarray(index)
        return TransitionDataset(self.states[index], self.actions[index],
                                 self.next_states[index], self.situation_index)

    def concat(self, other: "TransitionDataset") -> "TransitionDataset":
        return TransitionDataset(np.vstack([self.states, other.states]),
                                 np.vstack([self.actions, other.actions]),
                                 np.vstack([self.next_states, other.next_states]),
                                 self.situation_index)

    def equals(self, other: "TransitionDataset") -> bool:
        return (np.array_equal(self.states, other.states)
                and np.array_equal(self.actions, other.actions)
                and np.array_equal(self.next_states, other.next_states))


@dataclass
class Normalizer:
    """Per-dimension standardization of states, actions and delta targets.

    The network output is a standardized delta; the delta statistics also fix
    the Gaussian variance of the likelihood.  The identity normalizer gives
    raw inputs and a unit-variance likelihood.
    """

    state_mean: np.ndarray
    state_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray
    delta_mean: np.ndarray = None
    delta_std: np.ndarray = None

    def __post_init__(self):
        if self.delta_mean is None:
            self.delta_mean = np.zeros(len(self.state_mean))
        if self.delta_std is None:
            self.delta_std = np.ones(len(self.state_mean))

    @classmethod
    def identity(cls, state_dim: int, action_dim: int) -> "Normalizer":
        return cls(np.zeros(state_dim), np.ones(state_dim),
                   np.zeros(action_dim), np.ones(action_dim))

    @classmethod
    def fit(cls, datasets: Sequence[TransitionDataset], angle_dims: Sequence[int] = (),
            standardize_targets: bool = True, min_std: float = 1e-8) -> "Normalizer":
        states = np.vstack([d.states for d in datasets])
        actions = np.vstack([d.actions for d in datasets])
        deltas = np.vstack([d.next_states - d.states for d in datasets])
        if angle_dims:
            deltas[:, list(angle_dims)] = wrap_angle(deltas[:, list(angle_dims)])

        def _std(x):
            s = x.std(axis=0) if len(x) else np.ones(x.shape[1])
            return np.where(s < min_std, 1.0, s)

        def _mean(x):
            return x.mean(axis=0) if len(x) else np.zeros(x.shape[1])

        norm = cls(_mean(states), _std(states), _mean(actions), _std(actions))
        if standardize_targets:
            norm.delta_mean, norm.delta_std = _mean(deltas), _std(deltas)
        return norm

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in
                ("state_mean", "state_std", "action_mean", "action_std", "delta_mean", "delta_std")}


@dataclass
class ModelParams:
    """Weights and biases of the MLP plus the metadata needed to use them.

    ``weights[i]`` has shape ``(out, in)``.  ``angle_dims`` lists state
    coordinates that are angles; their deltas and predicted next states are
    wrapped to (-pi, pi].
    """

    weights: list
    biases: list
    state_dim: int
    action_dim: int
    embed_dim: int
    normalizer: Normalizer = None
    angle_dims: tuple = ()

    def __post_init__(self):
        if self.normalizer is None:
            self.normalizer = Normalizer.identity(self.state_dim, self.action_dim)
        self.angle_dims = tuple(int(i) for i in self.angle_dims)
        self.validate()

    @property
    def input_dim(self) -> int:
        return self.state_dim + self.action_dim + self.embed_dim

    @property
    def layer_sizes(self) -> list:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def validate(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigurationError("need one bias per weight matrix and at least one layer")
        fan_in = self.input_dim
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[1] != fan_in or b.shape != (w.shape[0],):
                raise ConfigurationError(f"layer shapes do not chain: {w.shape}, {b.shape}, expected fan-in {fan_in}")
            fan_in = w.shape[0]
        if fan_in != self.state_dim:
            raise ConfigurationError("output layer must produce state_dim values")
        if any(not (0 <= i < self.state_dim) for i in self.angle_dims):
            raise ConfigurationError("angle_dims out of range")

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def tensors(self) -> list:
        """Parameter arrays in row-major layer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    def with_tensors(self, tensors: Sequence[np.ndarray]) -> "ModelParams":
        # the normalizer is never mutated in place, so it is shared
        return ModelParams([np.asarray(t, dtype=float) for t in tensors[0::2]],
                           [np.asarray(t, dtype=float) for t in tensors[1::2]],
                           self.state_dim, self.action_dim, self.embed_dim,
                           self.normalizer, self.angle_dims)

    def with_flat(self, vector: np.ndarray) -> "ModelParams":
        tensors, pos = [], 0
        for t in self.tensors():
            tensors.append(np.array(vector[pos:pos + t.size], dtype=float).reshape(t.shape))
            pos += t.size
        if pos != len(vector):
            raise ConfigurationError("flat vector length does not match parameter count")
        return self.with_tensors(tensors)

    def equals(self, other: "ModelParams") -> bool:
        return (self.layer_sizes == other.layer_sizes
                and all(np.array_equal(a, b) for a, b in zip(self.tensors(), other.tensors())))

    def is_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors())


@dataclass
class Gradients:
    """Parameter gradients shaped like ``ModelParams.weights`` / ``biases``."""

    weights: list
    biases: list

    def tensors(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])


@dataclass
class EmbeddingTable:
    """One learnable embedding row per meta-training situation."""

    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.array(self.entries, dtype=float)
        if self.entries.ndim != 2 or len(self.entries) < 1:
            raise ConfigurationError("embedding table must be a non-empty (N, d) array")

    @classmethod
    def random(cls, n: int, dim: int, rng: np.random.Generator) -> "EmbeddingTable":
        return cls(rng.normal(0.0, EMBEDDING_INIT_STD, size=(n, dim)))

    @classmethod
    def empty(cls) -> "EmbeddingTable":
        """Singleton table holding one zero-width embedding (models without embedding input)."""
        return cls(np.zeros((1, 0)))

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i) -> np.ndarray:
        return self.entries[i].copy()

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.entries.copy())


@dataclass(frozen=True)
class InnerUpdateConfig:
    """k gradient steps with rate ``alpha`` on parameters and ``beta`` on the embedding.

    ``batch_size=None`` means always full batch; otherwise the full dataset is
    used whenever it fits in one batch.
    """

    k: int = 10
    alpha: float = 1e-2
    beta: float = 1e-2
    batch_size: int | None = DEFAULT_BATCH_SIZE

    def __post_init__(self):
        if self.k < 0:
            raise ConfigurationError("k must be >= 0")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("learning rates must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")


def init_params(state_dim: int, action_dim: int, embed_dim: int, hidden_sizes: Sequence[int],
                rng: np.random.Generator, normalizer: Normalizer | None = None,
                angle_dims: Sequence[int] = ()) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    sizes = [state_dim + action_dim + embed_dim, *hidden_sizes, state_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in) if fan_in else 0.0
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParams(weights, biases, state_dim, action_dim, embed_dim, normalizer, angle_dims)


def _check_finite(*arrays):
    for a in arrays:
        if not np.isfinite(a).all():
            raise InputError("non-finite input")


def _inputs(params: ModelParams, states, actions, embedding) -> np.ndarray:
    states = np.asarray(states, dtype=float)
    actions = np.asarray(actions, dtype=float)
    embedding = np.asarray(embedding, dtype=float)
    if actions.ndim < states.ndim:
        actions = actions.reshape(*states.shape[:-1], -1)
    if states.shape[-1] != params.state_dim or actions.shape[-1] != params.action_dim:
        raise ConfigurationError(
            f"expected state/action dims {params.state_dim}/{params.action_dim}, "
            f"got {states.shape[-1]}/{actions.shape[-1]}")
    if embedding.shape[-1] != params.embed_dim:
        raise ConfigurationError(f"expected embedding dim {params.embed_dim}, got {embedding.shape[-1]}")
    _check_finite(states, actions, embedding)
    norm = params.normalizer
    lead = np.broadcast_shapes(states.shape[:-1], actions.shape[:-1], embedding.shape[:-1])
    return np.concatenate([
        np.broadcast_to((states - norm.state_mean) / norm.state_std, (*lead, params.state_dim)),
        np.broadcast_to((actions - norm.action_mean) / norm.action_std, (*lead, params.action_dim)),
        np.broadcast_to(embedding, (*lead, params.embed_dim)),
    ], axis=-1)


def _batch_inputs(params: ModelParams, batch: TransitionDataset, embedding) -> np.ndarray:
    """Network inputs for a dataset; the normalized (s, a) block is cached on the dataset."""
    cache = batch._features
    if cache is None or cache[0] is not params.normalizer:
        norm = params.normalizer
        _check_finite(batch.states, batch.actions)
        feats = np.hstack([(batch.states - norm.state_mean) / norm.state_std,
                           (batch.actions - norm.action_mean) / norm.action_std])
        batch._features = cache = (norm, feats)
    embedding = np.asarray(embedding, dtype=float)
    if embedding.shape != (params.embed_dim,):
        raise ConfigurationError(f"expected embedding dim {params.embed_dim}, got {embedding.shape}")
    _check_finite(embedding)
    feats = cache[1]
    if not params.embed_dim:
        return feats
    x = np.empty((len(feats), feats.shape[1] + params.embed_dim))
    x[:, :feats.shape[1]] = feats
    x[:, feats.shape[1]:] = embedding
    return x


def _forward_chain(params: ModelParams, x: np.ndarray):
    """Return the list of layer activations, input first, prediction last."""
    acts = [x]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w.T + b
        acts.append(z if i == last else np.tanh(z))
    return acts


def _to_delta(params: ModelParams, out: np.ndarray) -> np.ndarray:
    norm = params.normalizer
    return norm.delta_mean + norm.delta_std * out


def forward(params: ModelParams, state, action, embedding) -> np.ndarray:
    """Predicted mean of ``s' - s``.  Accepts single vectors or batches."""
    return _to_delta(params, _forward_chain(params, _inputs(params, state, action, embedding))[-1])


def predict_next_state(params: ModelParams, state, action, embedding) -> np.ndarray:
    nxt = np.asarray(state, dtype=float) + forward(params, state, action, embedding)
    if params.angle_dims:
        idx = list(params.angle_dims)
        nxt[..., idx] = wrap_angle(nxt[..., idx])
    return nxt


def delta_targets(params: ModelParams, batch: TransitionDataset) -> np.ndarray:
    """Regression targets ``s' - s`` (angle coordinates wrapped)."""
    target = batch.next_states - batch.states
    if params.angle_dims:
        idx = list(params.angle_dims)
        target[:, idx] = wrap_angle(target[:, idx])
    return target


def _check_batch(params: ModelParams, batch: TransitionDataset):
    if len(batch) == 0:
        raise UsageError("empty batch")
    if batch.state_dim != params.state_dim or batch.action_dim != params.action_dim:
        raise ConfigurationError("batch dimensions do not match the model")


def _cached_targets(params: ModelParams, batch: TransitionDataset) -> np.ndarray:
    """Standardized delta targets, cached on the dataset."""
    cache = batch._targets
    norm = params.normalizer
    if cache is None or cache[0] != params.angle_dims or cache[1] is not norm:
        _check_finite(batch.next_states)
        z = (delta_targets(params, batch) - norm.delta_mean) / norm.delta_std
        batch._targets = cache = (params.angle_dims, norm, z)
    return cache[2]


def nll_loss(params: ModelParams, embedding, batch: TransitionDataset) -> float:
    _check_batch(params, batch)
    pred = _forward_chain(params, _batch_inputs(params, batch, embedding))[-1]
    resid = pred - _cached_targets(params, batch)
    return float(0.5 * np.mean(np.sum(resid * resid, axis=1)))


def loss_and_grad(params: ModelParams, embedding, batch: TransitionDataset):
    """Loss, parameter gradients and embedding gradient in one pass."""
    _check_batch(params, batch)
    acts = _forward_chain(params, _batch_inputs(params, batch, embedding))
    n = len(batch)
    resid = acts[-1] - _cached_targets(params, batch)
    loss = float(0.5 * np.mean(np.sum(resid * resid, axis=1)))

    delta = resid / n
    gw, gb = [None] * len(params.weights), [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
        if i > 0:
            delta = delta * (1.0 - acts[i] ** 2)
    start = params.state_dim + params.action_dim
    g_emb = delta[:, start:].sum(axis=0)
    return loss, Gradients(gw, gb), g_emb


def grad(params: ModelParams, embedding, batch: TransitionDataset):
    """Exact gradients of :func:`nll_loss` as ``(Gradients, grad_embedding)``."""
    _, g, g_emb = loss_and_grad(params, embedding, batch)
    return g, g_emb


def sample_batch(data: TransitionDataset, batch_size, rng) -> TransitionDataset:
    if batch_size is None or len(data) <= batch_size:
        return data
    if rng is None:
        raise UsageError("mini-batching requires an rng")
    return data.subset(rng.choice(len(data), size=batch_size, replace=False))


def sgd_step(params: ModelParams, g: Gradients, rate: float) -> ModelParams:
    return params.with_tensors([t - rate * gt for t, gt in zip(params.tensors(), g.tensors())])


def inner_update_U(params: ModelParams, embedding, data: TransitionDataset,
                   cfg: InnerUpdateConfig, rng: np.random.Generator | None = None):
    """Run ``cfg.k`` joint SGD steps on (params, embedding); inputs are not mutated.

    Returns fresh ``(params, embedding)``.  Raises :class:`DivergedUpdateError`
    with the offending step index when a loss becomes non-finite.
    """
    theta = params.copy()
    h = np.array(embedding, dtype=float, copy=True)
    for step in range(cfg.k):
        batch = sample_batch(data, cfg.batch_size, rng)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, g, g_h = loss_and_grad(theta, h, batch)
            if not np.isfinite(loss):
                raise DivergedUpdateError(f"non-finite loss at inner step {step}", step=step)
            theta = sgd_step(theta, g, cfg.alpha)
            h = h - cfg.beta * g_h
    if not (theta.is_finite() and np.isfinite(h).all()):
        raise DivergedUpdateError(f"non-finite parameters after inner step {cfg.k - 1}", step=cfg.k - 1)
    return theta, h
