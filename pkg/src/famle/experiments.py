"""Experiment drivers shared by the CLI and the acceptance suite.

Every function is a pure function of an :class:`ExperimentConfig` and explicit
seeds; nothing reads clocks or global random state.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import io, situations
from .adaptation import AdaptationConfig, adapt
from .config import ExperimentConfig
from .errors import ConfigurationError
from .model import EmbeddingTable, TransitionDataset, predict_next_state
from .mpc import MPCConfig, run_episode
from .trainers import (MetaConfig, MetaCorpus, MetaResult, famle_meta_train, init_model, maml_fo_train,
                       reptile_train, streams)


def derived_seed(*words: int) -> int:
    """Stable 32-bit seed for a tuple of integers."""
    return int(np.random.SeedSequence([int(w) for w in words]).generate_state(1)[0])


# ---------------------------------------------------------------- corpus

def build_corpus(cfg: ExperimentConfig, seed: int | None = None) -> MetaCorpus:
    """``n_situations`` distinct situations with ``n_transitions`` random-action transitions each."""
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    specs = situations.sample_distinct_situations(cfg.family, cfg.n_situations, rng, cfg.n_joints)
    data = [situations.collect_random_dataset(
        s, situations.CollectionConfig(cfg.n_transitions, derived_seed(seed, i)), situation_index=i)
        for i, s in enumerate(specs)]
    return MetaCorpus(data, specs)


def write_corpus(corpus: MetaCorpus, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, (d, s) in enumerate(zip(corpus.datasets, corpus.situation_specs)):
        io.save_dataset(d, directory / f"situation_{i:03d}.csv", s)


def read_corpus(directory) -> MetaCorpus:
    paths = sorted(Path(directory).glob("situation_*.csv"))
    if not paths:
        raise FileNotFoundError(f"no corpus files in {directory}")
    loaded = [io.load_dataset(p) for p in paths]
    return MetaCorpus([d for d, _ in loaded], [s for _, s in loaded])


# ---------------------------------------------------------------- meta-training

def angle_dims(cfg: ExperimentConfig) -> tuple:
    return situations.angle_dims(cfg.family, cfg.n_joints)


def meta_config(cfg: ExperimentConfig, method: str, seed: int | None = None) -> MetaConfig:
    sec = cfg.method(method)
    return MetaConfig(sec.alpha_meta, sec.beta_meta, sec.inner.build(), sec.outer_iterations,
                      cfg.seed if seed is None else seed, tuple(cfg.hidden_sizes),
                      cfg.embed_dim if method == "famle" else 0, cfg.standardize_targets)


def metatrain(cfg: ExperimentConfig, corpus: MetaCorpus, method: str, seed: int | None = None,
              callback=None) -> MetaResult:
    """Dispatch to the trainer for ``method``.

    ``scratch`` returns the random initialization with an empty embedding;
    its normalization is still fitted on the corpus.
    """
    mc = meta_config(cfg, method, seed)
    ad = angle_dims(cfg)
    if method == "famle":
        return famle_meta_train(corpus, mc, angle_dims=ad, callback=callback)
    if method == "maml":
        return maml_fo_train(corpus, mc, angle_dims=ad, callback=callback)
    if method == "reptile":
        return reptile_train(corpus, mc, angle_dims=ad, callback=callback)
    if method == "scratch":
        theta, _ = init_model(corpus, mc, 0, 1, streams(mc.rng_seed)[0], ad)
        return MetaResult(theta, EmbeddingTable.empty(), [])
    raise ConfigurationError(f"unknown method {method!r}")


# ---------------------------------------------------------------- control comparison

def held_out_situation(cfg: ExperimentConfig, corpus_specs, seed: int):
    rng = np.random.default_rng(derived_seed(seed, 0x5eed))
    return situations.sample_held_out(cfg.family, rng, corpus_specs, cfg.n_joints,
                                      cfg.run.held_out_damages)


def adaptation_config(cfg: ExperimentConfig, method: str) -> AdaptationConfig:
    # the from-scratch learner keeps training its own model; the others restart from the prior
    return AdaptationConfig(cfg.method(method).online_inner(), cfg.adaptation.window_size,
                            cfg.adaptation.adapt_every, warm_start=(method == "scratch"))


def mpc_config(cfg: ExperimentConfig) -> MPCConfig:
    low, high = situations.action_bounds(cfg.family, cfg.n_joints)
    return MPCConfig(cfg.mpc.horizon, cfg.mpc.n_candidates, tuple(low), tuple(high))


def _episode(cfg, spec, result, method, seed):
    return run_episode(spec, result, situations.reward_fn_for(cfg.family), cfg.run.episode_length,
                       adaptation_config(cfg, method), mpc_config(cfg), seed)


@dataclass
class ComparisonReport:
    held_out: situations.SituationSpec
    seeds: tuple
    episodes: dict = field(default_factory=dict)   # method -> list of EpisodeLog, seed order

    @property
    def methods(self) -> list:
        return list(self.episodes)

    def rewards(self, method: str) -> np.ndarray:
        """``(n_seeds, episode_length)`` per-step rewards."""
        eps = self.episodes[method]
        return np.array([e.rewards for e in eps]).reshape(len(eps), -1)

    def cumulative(self, method: str) -> np.ndarray:
        return np.cumsum(self.rewards(method), axis=1)

    def aggregate(self, method: str) -> dict:
        """Per-step median and quartiles of the cumulative reward across seeds."""
        c = self.cumulative(method)
        return {"median": np.median(c, axis=0), "q25": np.percentile(c, 25, axis=0),
                "q75": np.percentile(c, 75, axis=0)}

    def final_median(self, method: str) -> float:
        c = self.cumulative(method)
        return float(np.median(c[:, -1])) if c.shape[1] else 0.0

    def summary(self, goal_threshold: float) -> dict:
        out = {"held_out": self.held_out.to_json(), "seeds": list(self.seeds), "methods": {}}
        for m in self.methods:
            c = self.cumulative(m)
            finals = [float(x) for x in c[:, -1]] if c.shape[1] else [0.0] * len(self.seeds)
            out["methods"][m] = {
                "final_cumulative_reward": finals,
                "median_final_cumulative_reward": self.final_median(m),
                "steps_to_goal": [e.steps_to_goal(goal_threshold) for e in self.episodes[m]],
                "adaptation_events": [len(e.adaptations) for e in self.episodes[m]],
                "diverged_adaptations": [sum(a.diverged for a in e.adaptations) for e in self.episodes[m]],
            }
        return out


def run_comparison(cfg: ExperimentConfig, results: dict, held_out, seeds=None, jobs: int = 1) -> ComparisonReport:
    """Run every method in ``results`` on ``held_out`` for every seed."""
    seeds = tuple(cfg.run.seeds if seeds is None else seeds)
    tasks = [(m, s) for m in results for s in seeds]
    logs = Parallel(n_jobs=jobs)(delayed(_episode)(cfg, held_out, results[m], m, s) for m, s in tasks)
    report = ComparisonReport(held_out, seeds)
    for (m, _), ep in zip(tasks, logs):
        report.episodes.setdefault(m, []).append(ep)
    return report


def write_report(report: ComparisonReport, cfg: ExperimentConfig, directory):
    directory = Path(directory)
    (directory / "curves").mkdir(parents=True, exist_ok=True)
    (directory / "episodes").mkdir(parents=True, exist_ok=True)
    for m in report.methods:
        rewards, cum = report.rewards(m), report.cumulative(m)
        for k, seed in enumerate(report.seeds):
            io.write_rows(directory / "curves" / f"{m}_seed{seed}.csv", ["step", "reward", "cumulative_reward"],
                           [[t, io.fmt(r), io.fmt(c)] for t, (r, c) in enumerate(zip(rewards[k], cum[k]))])
            ep = report.episodes[m][k]
            io.save_episode(ep, directory / "episodes" / f"{m}_seed{seed}.csv")
            io.save_adaptations(ep, directory / "episodes" / f"{m}_seed{seed}_adaptations.csv")
        agg = report.aggregate(m)
        io.write_rows(directory / f"aggregate_{m}.csv", ["step", "median", "q25", "q75"],
                       [[t, io.fmt(a), io.fmt(b), io.fmt(c)]
                        for t, (a, b, c) in enumerate(zip(agg["median"], agg["q25"], agg["q75"]))])
    (directory / "report.json").write_text(json.dumps(report.summary(cfg.run.goal_threshold), indent=1))


# ---------------------------------------------------------------- sine figure

@dataclass
class SineFigure:
    seed: int
    held_out: situations.SituationSpec
    grid: np.ndarray
    truth: np.ndarray
    fits: dict = field(default_factory=dict)   # count -> {"famle": y, "maml": y}
    mse: dict = field(default_factory=dict)    # count -> {"famle": float, "maml": float}
    points: dict = field(default_factory=dict)  # count -> (xs, ys)


def _sine_data(spec, xs) -> TransitionDataset:
    ys = np.array([situations.step(spec, [x], ()) for x in xs]).reshape(-1, 1)
    return TransitionDataset(xs.reshape(-1, 1), np.zeros((len(xs), 0)), ys)


def sine_figure(cfg: ExperimentConfig, seed: int, held_out=None, results=None) -> SineFigure:
    """Meta-train FAMLE and first-order MAML on ``n_situations`` sines and fit a held-out one.

    With zero points each method reports its prior mean: the MAML prior's
    prediction, and for FAMLE the prediction averaged over all embeddings.
    ``held_out`` overrides the sampled held-out sine; ``results`` supplies
    pre-trained ``{"famle": ..., "maml": ...}`` models.
    """
    if cfg.family != "sine":
        raise ConfigurationError("sine_figure needs family: sine")
    rng = np.random.default_rng(seed)
    specs = situations.sample_distinct_situations("sine", cfg.n_situations + 1, rng)
    train, sampled_held = specs[:-1], specs[-1]
    held = sampled_held if held_out is None else held_out
    if results is None:
        corpus = MetaCorpus([situations.collect_random_dataset(
            s, situations.CollectionConfig(cfg.n_transitions, derived_seed(seed, i)), i)
            for i, s in enumerate(train)], train)
        results = {m: metatrain(cfg, corpus, m, seed) for m in ("famle", "maml")}
    fr, mr = results["famle"], results["maml"]
    lo, hi = situations.SINE_X_RANGE
    grid = np.linspace(lo, hi, cfg.sine.grid_points)
    truth = np.array([situations.step(held, [x], ())[0] for x in grid])
    gx, ga = grid[:, None], np.zeros((len(grid), 0))
    fig = SineFigure(seed, held, grid, truth)
    adapt_rng = np.random.default_rng(derived_seed(seed, 1))
    for count in cfg.sine.point_counts:
        xs = rng.uniform(lo, hi, count)
        if count == 0:
            f = np.mean([predict_next_state(fr.theta_meta, gx, ga, fr.embedding_table[i])[:, 0]
                         for i in range(len(fr.embedding_table))], axis=0)
            m = predict_next_state(mr.theta_meta, gx, ga, mr.embedding_table[0])[:, 0]
        else:
            data = _sine_data(held, xs)
            fa = adapt(fr.theta_meta, fr.embedding_table, data, cfg.famle.online_inner(), adapt_rng)
            ma = adapt(mr.theta_meta, mr.embedding_table, data, cfg.maml.online_inner(), adapt_rng)
            f = predict_next_state(fa.theta_star, gx, ga, fa.h_star)[:, 0]
            m = predict_next_state(ma.theta_star, gx, ga, ma.h_star)[:, 0]
        fig.points[count] = (xs, np.array([situations.step(held, [x], ())[0] for x in xs]))
        fig.fits[count] = {"famle": f, "maml": m}
        fig.mse[count] = {"famle": float(np.mean((f - truth) ** 2)), "maml": float(np.mean((m - truth) ** 2))}
    return fig


def write_sine_figures(figs, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for fig in figs:
        for count, fit in fig.fits.items():
            io.write_rows(directory / f"grid_seed{fig.seed}_n{count}.csv", ["x", "truth", "famle", "maml"],
                           [[io.fmt(x), io.fmt(t), io.fmt(a), io.fmt(b)]
                            for x, t, a, b in zip(fig.grid, fig.truth, fit["famle"], fit["maml"])])
            rows.append([fig.seed, count, io.fmt(fig.mse[count]["famle"]), io.fmt(fig.mse[count]["maml"])])
    io.write_rows(directory / "mse.csv", ["seed", "n_points", "famle_mse", "maml_mse"], rows)
