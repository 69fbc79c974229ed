"""Meta-training: joint parameter/embedding Reptile (FAMLE), plain Reptile and first-order MAML.

All three trainers draw from the same seeded streams and share
:func:`famle.model.inner_update_U` and :func:`famle.model.loss_and_grad`, so
they coincide bit-for-bit in their degenerate configurations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DivergedUpdateError
from .model import (EmbeddingTable, InnerUpdateConfig, ModelParams, Normalizer, TransitionDataset,
                    init_params, inner_update_U, loss_and_grad, nll_loss, sample_batch, sgd_step)


@dataclass(frozen=True)
class MetaConfig:
    alpha_meta: float = 0.1
    beta_meta: float = 0.1
    inner: InnerUpdateConfig = field(default_factory=InnerUpdateConfig)
    outer_iterations: int = 3000
    rng_seed: int = 0
    hidden_sizes: tuple = (64, 64)
    embed_dim: int = 5
    standardize_targets: bool = True

    def __post_init__(self):
        if self.alpha_meta < 0 or self.beta_meta < 0:
            raise ConfigurationError("meta learning rates must be non-negative")
        if self.outer_iterations < 0:
            raise ConfigurationError("outer_iterations must be >= 0")
        if self.embed_dim < 0:
            raise ConfigurationError("embed_dim must be >= 0")


@dataclass
class MetaCorpus:
    datasets: list
    situation_specs: list = None

    def __post_init__(self):
        if not self.datasets:
            raise ConfigurationError("corpus needs at least one dataset")
        if self.situation_specs is not None and len(self.situation_specs) != len(self.datasets):
            raise ConfigurationError("datasets and situation_specs differ in length")
        sd, ad = self.datasets[0].state_dim, self.datasets[0].action_dim
        if any(d.state_dim != sd or d.action_dim != ad for d in self.datasets):
            raise ConfigurationError("corpus datasets are not dimensionally homogeneous")
        for i, d in enumerate(self.datasets):
            if d.situation_index is None:
                d.situation_index = i

    def __len__(self):
        return len(self.datasets)

    @property
    def state_dim(self) -> int:
        return self.datasets[0].state_dim

    @property
    def action_dim(self) -> int:
        return self.datasets[0].action_dim


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    situation_index: int
    loss_before: float
    loss_after: float


@dataclass
class IterationTrace:
    """Full before/adapted/after state of one outer iteration, handed to callbacks."""

    iteration: int
    situation_index: int
    theta_before: ModelParams
    h_before: np.ndarray
    theta_adapted: ModelParams
    h_adapted: np.ndarray
    theta_after: ModelParams
    h_after: np.ndarray
    table_after: EmbeddingTable


@dataclass
class MetaResult:
    theta_meta: ModelParams
    embedding_table: EmbeddingTable
    training_log: list = field(default_factory=list)


def streams(seed: int):
    """Independent generators for initialization, the outer loop and data splits."""
    init_ss, loop_ss, split_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init_ss), np.random.default_rng(loop_ss),
            np.random.default_rng(split_ss))


def init_model(corpus: MetaCorpus, cfg: MetaConfig, embed_dim: int, n_embeddings: int,
               rng: np.random.Generator, angle_dims=()):
    """Random parameters and embeddings; normalization fitted on the corpus."""
    theta = init_params(corpus.state_dim, corpus.action_dim, embed_dim, cfg.hidden_sizes, rng,
                        Normalizer.fit(corpus.datasets, angle_dims, cfg.standardize_targets), angle_dims)
    return theta, EmbeddingTable.random(n_embeddings, embed_dim, rng)


def _interpolate(theta: ModelParams, target: ModelParams, rate: float) -> ModelParams:
    return theta.with_tensors([t + rate * (tt - t) for t, tt in zip(theta.tensors(), target.tensors())])


def _reptile_loop(theta: ModelParams, table: EmbeddingTable, datasets: Sequence[TransitionDataset],
                  row_of: Callable[[int], int], cfg: MetaConfig, rng: np.random.Generator,
                  callback=None) -> MetaResult:
    log = []
    for it in range(cfg.outer_iterations):
        i = int(rng.integers(len(datasets)))
        row = row_of(i)
        data = datasets[i]
        h = table.entries[row].copy()
        with np.errstate(over="ignore", invalid="ignore"):
            before = nll_loss(theta, h, data)
        if not np.isfinite(before):
            raise DivergedUpdateError(f"non-finite outer state at iteration {it}", iteration=it)
        try:
            theta_t, h_t = inner_update_U(theta, h, data, cfg.inner, rng)
        except DivergedUpdateError as exc:
            raise DivergedUpdateError(f"inner update diverged at iteration {it}, step {exc.step}",
                                      step=exc.step, iteration=it) from exc
        after = nll_loss(theta_t, h_t, data)
        new_theta = _interpolate(theta, theta_t, cfg.alpha_meta)
        new_h = h + cfg.beta_meta * (h_t - h)
        if not (new_theta.is_finite() and np.isfinite(new_h).all()):
            raise DivergedUpdateError(f"non-finite outer state at iteration {it}", iteration=it)
        table.entries[row] = new_h
        if callback is not None:
            callback(IterationTrace(it, i, theta, h, theta_t, h_t, new_theta, new_h.copy(), table.copy()))
        theta = new_theta
        log.append(IterationRecord(it, i, before, after))
    return MetaResult(theta, table, log)


def famle_meta_train(corpus: MetaCorpus, cfg: MetaConfig, init: ModelParams | None = None,
                     embeddings: EmbeddingTable | None = None, angle_dims=(), callback=None) -> MetaResult:
    """Jointly meta-train shared parameters and one embedding per situation.

    Each outer iteration samples a situation ``i`` uniformly, runs the inner
    update on ``(theta, h_i)`` and moves both towards the adapted values with
    rates ``alpha_meta`` and ``beta_meta``.  Only row ``i`` of the table moves.
    """
    init_rng, loop_rng, _ = streams(cfg.rng_seed)
    theta0, table0 = init_model(corpus, cfg, cfg.embed_dim, len(corpus), init_rng, angle_dims)
    theta = (theta0 if init is None else init).copy()
    table = (table0 if embeddings is None else embeddings).copy()
    if len(table) != len(corpus):
        raise ConfigurationError("embedding table must have one row per corpus situation")
    if theta.embed_dim != table.dim:
        raise ConfigurationError("model embed_dim does not match the embedding table")
    return _reptile_loop(theta, table, corpus.datasets, lambda i: i, cfg, loop_rng, callback)


def reptile_train(corpus: MetaCorpus, cfg: MetaConfig, init: ModelParams | None = None,
                  embed_dim: int = 0, angle_dims=(), callback=None) -> MetaResult:
    """Plain Reptile over the corpus with a single prior.

    With ``embed_dim > 0`` a single shared embedding is carried as an extra
    trainable input (updated with ``beta_meta``); with the default of zero the
    model sees ``(s, a)`` only.  The returned table has exactly one row.
    """
    init_rng, loop_rng, _ = streams(cfg.rng_seed)
    theta0, table0 = init_model(corpus, cfg, embed_dim, 1, init_rng, angle_dims)
    theta = (theta0 if init is None else init).copy()
    return _reptile_loop(theta, table0, corpus.datasets, lambda i: 0, cfg, loop_rng, callback)


def split_corpus(corpus: MetaCorpus, rng: np.random.Generator):
    """Seeded 50/50 inner/outer split of every situation dataset."""
    out = []
    for d in corpus.datasets:
        if len(d) < 2:
            raise ConfigurationError("MAML split needs at least two transitions per situation")
        perm = rng.permutation(len(d))
        half = len(d) // 2
        out.append((d.subset(np.sort(perm[:half])), d.subset(np.sort(perm[half:]))))
    return out


def maml_fo_train(corpus: MetaCorpus, cfg: MetaConfig, init: ModelParams | None = None,
                  angle_dims=(), callback=None) -> MetaResult:
    """First-order MAML: adapt on the inner half, step with the outer-half gradient at the adapted point.

    ``cfg.inner.k == 0`` disables adaptation; the split is then skipped and each
    iteration is a plain SGD step on the sampled situation's full dataset.
    """
    init_rng, loop_rng, split_rng = streams(cfg.rng_seed)
    theta0, table = init_model(corpus, cfg, 0, 1, init_rng, angle_dims)
    theta = (theta0 if init is None else init).copy()
    if theta.embed_dim != 0:
        raise ConfigurationError("first-order MAML baseline takes a model without embedding input")
    h = table.entries[0]
    if cfg.inner.k == 0:
        splits = [(d, d) for d in corpus.datasets]
    else:
        splits = split_corpus(corpus, split_rng)
    log = []
    for it in range(cfg.outer_iterations):
        i = int(loop_rng.integers(len(splits)))
        inner_data, outer_data = splits[i]
        before = nll_loss(theta, h, outer_data)
        try:
            theta_t, _ = inner_update_U(theta, h, inner_data, cfg.inner, loop_rng)
        except DivergedUpdateError as exc:
            raise DivergedUpdateError(f"inner update diverged at iteration {it}, step {exc.step}",
                                      step=exc.step, iteration=it) from exc
        batch = sample_batch(outer_data, cfg.inner.batch_size, loop_rng)
        after, g, _ = loss_and_grad(theta_t, h, batch)
        new_theta = sgd_step(theta, g, cfg.alpha_meta)
        if not (np.isfinite(after) and new_theta.is_finite()):
            raise DivergedUpdateError(f"non-finite outer state at iteration {it}", iteration=it)
        if callback is not None:
            callback(IterationTrace(it, i, theta, h, theta_t, h, new_theta, h, table.copy()))
        theta = new_theta
        log.append(IterationRecord(it, i, before, nll_loss(theta_t, h, outer_data)))
    return MetaResult(theta, table, log)


def post_adaptation_losses(theta: ModelParams, table: EmbeddingTable, corpus: MetaCorpus,
                           inner: InnerUpdateConfig, seed: int = 0) -> np.ndarray:
    """Loss of each situation after its own inner update from the given starting point.

    Single-row tables are shared by every situation.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i, data in enumerate(corpus.datasets):
        h = table[i if len(table) > 1 else 0]
        theta_t, h_t = inner_update_U(theta, h, data, inner, rng)
        out.append(nll_loss(theta_t, h_t, data))
    return np.array(out)
