"""Random-shooting MPC over an adapted model, and the closed adaptation/control loop."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .adaptation import AdaptationConfig, AdaptedModel, ObservationWindow, adapt, embedding_losses, argmin_lowest
from .errors import ConfigurationError, DivergedUpdateError, PlanningFailure
from .model import Transition, _forward_chain, _inputs, _to_delta, wrap_angle
from . import situations

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MPCConfig:
    horizon: int = 15
    n_candidates: int = 500
    action_low: tuple = (-1.0,)
    action_high: tuple = (1.0,)
    rng_seed: int = 0

    def __post_init__(self):
        if self.horizon < 1 or self.n_candidates < 1:
            raise ConfigurationError("horizon and n_candidates must be >= 1")
        low, high = np.asarray(self.action_low, float), np.asarray(self.action_high, float)
        if low.shape != high.shape or not np.all(low < high):
            raise ConfigurationError("need action_low < action_high elementwise")

    @property
    def action_dim(self) -> int:
        return len(self.action_low)

    @property
    def block(self) -> int:
        """Uniform draws per candidate, padded to whole Philox counter blocks."""
        n = self.horizon * self.action_dim
        return -(-n // 4) * 4


@dataclass
class RolloutScore:
    trajectory_index: int
    total_reward: float
    predicted_states: np.ndarray
    diverged: bool = False


def _philox_key(seed: int) -> int:
    words = np.random.SeedSequence(seed).generate_state(2, np.uint64)
    return int(words[0]) | (int(words[1]) << 64)


def _scale(u: np.ndarray, cfg: MPCConfig) -> np.ndarray:
    low, high = np.asarray(cfg.action_low, float), np.asarray(cfg.action_high, float)
    n = cfg.horizon * cfg.action_dim
    u = u[..., :n].reshape(*u.shape[:-1], cfg.horizon, cfg.action_dim)
    return low + (high - low) * u


def sample_trajectories(cfg: MPCConfig) -> np.ndarray:
    """All candidates, shape ``(n_candidates, horizon, action_dim)``.

    Candidate ``i`` is a fixed slice of a counter-based stream keyed by the
    seed, so :func:`candidate_trajectory` reproduces it in isolation.
    """
    gen = np.random.Generator(np.random.Philox(key=_philox_key(cfg.rng_seed)))
    return _scale(gen.random((cfg.n_candidates, cfg.block)), cfg)


def candidate_trajectory(cfg: MPCConfig, index: int) -> np.ndarray:
    bitgen = np.random.Philox(key=_philox_key(cfg.rng_seed))
    bitgen.advance(index * cfg.block // 4)
    return _scale(np.random.Generator(bitgen).random(cfg.block), cfg)


def score_trajectories(model: AdaptedModel, reward_fn, s0, actions: np.ndarray):
    """Roll every candidate through the model.

    Returns ``(totals, predicted_states, diverged)``; diverged candidates get a
    total of ``-inf``.
    """
    theta, h = model.theta_star, model.h_star
    actions = np.asarray(actions, dtype=float)
    n, horizon = actions.shape[:2]
    states = np.empty((n, horizon + 1, theta.state_dim))
    states[:, 0] = np.asarray(s0, dtype=float)
    totals = np.zeros(n)
    bad = np.zeros(n, dtype=bool)
    idx = list(theta.angle_dims)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(horizon):
            cur = np.where(bad[:, None], 0.0, states[:, t])
            delta = _to_delta(theta, _forward_chain(theta, _inputs(theta, cur, actions[:, t], h))[-1])
            nxt = cur + delta
            if idx:
                nxt[:, idx] = wrap_angle(nxt[:, idx])
            r = np.asarray(reward_fn(cur, actions[:, t], nxt), dtype=float)
            bad |= ~np.isfinite(nxt).all(axis=1) | ~np.isfinite(r)
            states[:, t + 1] = nxt
            totals += np.where(bad, 0.0, r)
    totals[bad] = -np.inf
    return totals, states, bad


def rollout_score(model: AdaptedModel, reward_fn, s0, traj, trajectory_index: int = 0) -> RolloutScore:
    """Undiscounted model-predicted return of one action sequence."""
    traj = np.asarray(traj, dtype=float)
    if traj.ndim == 1:
        traj = traj[:, None]
    totals, states, bad = score_trajectories(model, reward_fn, s0, traj[None])
    return RolloutScore(trajectory_index, float(totals[0]), states[0], bool(bad[0]))


@dataclass
class PlanResult:
    action: np.ndarray
    index: int
    scores: np.ndarray
    trajectories: np.ndarray


def plan_detailed(model: AdaptedModel, reward_fn, s0, cfg: MPCConfig) -> PlanResult:
    trajs = sample_trajectories(cfg)
    totals, _, _ = score_trajectories(model, reward_fn, s0, trajs)
    if np.all(np.isneginf(totals)):
        raise PlanningFailure("every candidate trajectory diverged")
    best = int(np.argmax(totals))
    return PlanResult(trajs[best, 0].copy(), best, totals, trajs)


def plan(model: AdaptedModel, reward_fn, s0, cfg: MPCConfig) -> np.ndarray:
    """First action of the best of ``cfg.n_candidates`` uniform random trajectories."""
    return plan_detailed(model, reward_fn, s0, cfg).action


@dataclass
class StepRecord:
    step: int
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    selected_index: int
    pre_loss: float
    post_loss: float


@dataclass
class AdaptationEvent:
    step: int
    selected_index: int
    pre_loss: float
    post_loss: float
    embedding_losses: tuple
    diverged: bool = False


@dataclass
class EpisodeLog:
    steps: list = field(default_factory=list)
    adaptations: list = field(default_factory=list)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps])

    @property
    def cumulative_rewards(self) -> np.ndarray:
        return np.cumsum(self.rewards)

    def steps_to_goal(self, threshold: float):
        """First step whose reward exceeds ``threshold``, or None."""
        hits = np.nonzero(self.rewards > threshold)[0]
        return int(hits[0]) if len(hits) else None


def run_episode(spec, meta_result, reward_fn, episode_length: int, adaptation: AdaptationConfig,
                mpc_cfg: MPCConfig, seed: int = 0, initial_state=None) -> EpisodeLog:
    """Closed loop: cold-start random actions, then adapt every K steps and plan every step.

    Adaptation restarts from the meta-trained parameters unless
    ``adaptation.warm_start`` is set (the from-scratch baseline keeps training
    its previous model).
    """
    theta_meta, table = meta_result.theta_meta, meta_result.embedding_table
    state = situations.initial_state(spec) if initial_state is None else np.asarray(initial_state, float)
    low, high = np.asarray(mpc_cfg.action_low, float), np.asarray(mpc_cfg.action_high, float)
    act_ss, adapt_ss, plan_ss = np.random.SeedSequence(seed).spawn(3)
    act_rng, adapt_rng = np.random.default_rng(act_ss), np.random.default_rng(adapt_ss)
    plan_seeds = plan_ss.generate_state(max(episode_length, 1), np.uint32)
    window = ObservationWindow(adaptation.window_size, theta_meta.state_dim, theta_meta.action_dim)
    K = adaptation.adapt_every
    episode = EpisodeLog()
    model = None
    base = theta_meta
    for t in range(episode_length):
        if t >= K and (t % K == 0 or model is None):
            model, event = _readapt(base, table, window, adaptation, adapt_rng, t)
            episode.adaptations.append(event)
            if adaptation.warm_start:
                base = model.theta_star
        if model is None:
            action = act_rng.uniform(low, high)
        else:
            cfg = dataclasses.replace(mpc_cfg, rng_seed=int(plan_seeds[t]))
            try:
                action = plan(model, reward_fn, state, cfg)
            except PlanningFailure:
                log.warning("planning failed at step %d, using a random action", t)
                action = act_rng.uniform(low, high)
        nxt = situations.step(spec, state, action)
        r = float(reward_fn(state, action, nxt))
        window.push(Transition(state, action, nxt))
        episode.steps.append(StepRecord(
            t, state, np.asarray(action, float), r, nxt,
            -1 if model is None else model.source_index,
            float("nan") if model is None else model.pre_loss,
            float("nan") if model is None else model.post_loss))
        state = nxt
    return episode


def _readapt(base, table, window, adaptation, rng, t):
    try:
        model = adapt(base, table, window, adaptation.inner, rng)
        diverged = False
    except DivergedUpdateError:
        losses = embedding_losses(base, table, window)
        idx = argmin_lowest(losses)
        log.warning("adaptation diverged at step %d, keeping the unadapted prior", t)
        model = AdaptedModel(base, table[idx], idx, len(window), float(losses[idx]),
                             float(losses[idx]), tuple(losses))
        diverged = True
    return model, AdaptationEvent(t, model.source_index, model.pre_loss, model.post_loss,
                                  model.embedding_losses, diverged)
