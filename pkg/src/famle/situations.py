"""Analytic situation-parameterized environments.

Three families stand in for a physics simulator:

* ``sine``: regression cast as zero-action dynamics, ``x -> A sin(w x + phi)``.
* ``arm``: velocity-controlled planar arm with unit links; joints may be
  weakened, reversed or blocked.
* ``pointmass``: 2-D point mass on terrain with a friction multiplier.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError, UsageError
from .model import Transition, TransitionDataset, wrap_angle

FAMILIES = ("sine", "arm", "pointmass")
DAMAGES = ("weakened", "reversed", "blocked")

DT = 0.1
POINTMASS_MU = 0.5
POINTMASS_GOAL = np.array([2.0, 0.0])
SINE_X_RANGE = (-5.0, 5.0)
RESET_EVERY = 50

AMPLITUDE_RANGE = (0.5, 2.0)
PHASE_RANGE = (0.0, np.pi)
FREQUENCY_RANGE = (0.5, 2.0)
FRICTION_RANGE = (0.25, 4.0)
GAIN_RANGE = (0.0, 1.0)
# sampled weakened gains stay clear of healthy (1) and blocked (0)
WEAKENED_SAMPLE_RANGE = (0.25, 0.75)


@dataclass(frozen=True)
class SituationSpec:
    """A sampled situation.

    ``params`` holds ``amplitude``/``phase``/``frequency`` (sine),
    ``damages`` as a tuple of ``(tag, gain)`` pairs (arm) or ``friction``
    (pointmass).
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}")
        if self.family == "arm":
            damages = tuple((str(t), float(g)) for t, g in self.params["damages"])
            object.__setattr__(self, "params", {"damages": damages})
        self.validate()

    def validate(self):
        p = self.params
        if self.family == "sine":
            _in_range(p["amplitude"], AMPLITUDE_RANGE, "amplitude")
            _in_range(p["phase"], PHASE_RANGE, "phase")
            _in_range(p["frequency"], FREQUENCY_RANGE, "frequency")
        elif self.family == "pointmass":
            _in_range(p["friction"], FRICTION_RANGE, "friction")
        else:
            damages = p["damages"]
            if not damages:
                raise ConfigurationError("arm needs at least one joint")
            for tag, gain in damages:
                if tag not in ("healthy",) + DAMAGES:
                    raise ConfigurationError(f"unknown damage tag {tag!r}")
                if tag == "weakened" and not (GAIN_RANGE[0] < gain < GAIN_RANGE[1]):
                    raise ConfigurationError("weakened gain must lie in (0, 1)")
                if gain != _gain_for(tag, gain):
                    raise ConfigurationError(f"gain {gain} inconsistent with tag {tag!r}")

    @property
    def n_joints(self) -> int:
        return len(self.params["damages"]) if self.family == "arm" else 0

    @property
    def gains(self) -> np.ndarray:
        return np.array([g for _, g in self.params["damages"]])

    @property
    def damage_tags(self) -> tuple:
        return tuple(t for t, _ in self.params["damages"])

    def key(self) -> tuple:
        """Identity used to reject duplicate or held-out collisions."""
        if self.family == "arm":
            return ("arm", self.damage_tags)
        return (self.family, tuple(sorted(self.params.items())))

    def to_json(self) -> dict:
        if self.family == "arm":
            return {"family": "arm", "params": {"damages": [list(d) for d in self.params["damages"]]}}
        return {"family": self.family, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: dict) -> "SituationSpec":
        return cls(obj["family"], dict(obj["params"]))


def _in_range(value, bounds, name):
    if not (bounds[0] <= value <= bounds[1]):
        raise ConfigurationError(f"{name}={value} outside {bounds}")


def _gain_for(tag, gain=1.0):
    gains = {"healthy": 1.0, "weakened": gain, "reversed": -1.0, "blocked": 0.0}
    if tag not in gains:
        raise ConfigurationError(f"unknown damage tag {tag!r}")
    return gains[tag]


def sine(amplitude, phase, frequency) -> SituationSpec:
    return SituationSpec("sine", {"amplitude": float(amplitude), "phase": float(phase),
                                  "frequency": float(frequency)})


def arm(*tags, gains=None) -> SituationSpec:
    """Arm spec from damage tags, e.g. ``arm("healthy", "weakened", gains=[1, 0.5])``."""
    gains = gains or [1.0] * len(tags)
    return SituationSpec("arm", {"damages": [(t, _gain_for(t, g)) for t, g in zip(tags, gains)]})


def pointmass(friction) -> SituationSpec:
    return SituationSpec("pointmass", {"friction": float(friction)})


def dims(family: str, n_joints: int = 2) -> tuple:
    """``(state_dim, action_dim)`` of a family."""
    if family == "sine":
        return 1, 0
    if family == "arm":
        return n_joints + 2, n_joints
    if family == "pointmass":
        return 4, 2
    raise ConfigurationError(f"unknown family {family!r}")


def spec_dims(spec: SituationSpec) -> tuple:
    return dims(spec.family, spec.n_joints)


def angle_dims(family: str, n_joints: int = 2) -> tuple:
    return tuple(range(n_joints)) if family == "arm" else ()


def action_bounds(family: str, n_joints: int = 2):
    _, da = dims(family, n_joints)
    return -np.ones(da), np.ones(da)


def sample_situation(family: str, rng: np.random.Generator, n_joints: int = 2) -> SituationSpec:
    """Draw a situation uniformly from the family's declared ranges."""
    if family == "sine":
        return sine(rng.uniform(*AMPLITUDE_RANGE), rng.uniform(*PHASE_RANGE),
                    rng.uniform(*FREQUENCY_RANGE))
    if family == "pointmass":
        return pointmass(rng.uniform(*FRICTION_RANGE))
    if family != "arm":
        raise ConfigurationError(f"unknown family {family!r}")
    while True:
        damages = []
        for _ in range(n_joints):
            if rng.random() < 0.5:
                damages.append(("healthy", 1.0))
                continue
            tag = DAMAGES[rng.integers(len(DAMAGES))]
            gain = rng.uniform(*WEAKENED_SAMPLE_RANGE) if tag == "weakened" else _gain_for(tag)
            damages.append((tag, gain))
        if sum(t == "blocked" for t, _ in damages) < n_joints:
            return SituationSpec("arm", {"damages": damages})


def sample_distinct_situations(family: str, n: int, rng: np.random.Generator,
                               n_joints: int = 2, exclude=()) -> list:
    """``n`` situations with pairwise distinct keys, none colliding with ``exclude``."""
    taken = {s.key() for s in exclude}
    out = []
    for _ in range(100_000):
        if len(out) == n:
            return out
        spec = sample_situation(family, rng, n_joints)
        if spec.key() not in taken:
            taken.add(spec.key())
            out.append(spec)
    raise ConfigurationError(f"could not sample {n} distinct {family} situations")


def sample_held_out(family: str, rng: np.random.Generator, exclude, n_joints: int = 2,
                    n_damaged: int | None = None) -> SituationSpec:
    """A situation whose key collides with none of ``exclude``.

    For the arm, ``n_damaged`` fixes how many joints are damaged (capped at
    the joint count); draws that miss it are resampled.
    """
    taken = {s.key() for s in exclude}
    want = None if n_damaged is None else min(n_damaged, n_joints)
    for _ in range(100_000):
        spec = sample_situation(family, rng, n_joints)
        if spec.key() in taken:
            continue
        if family == "arm" and want is not None and sum(t != "healthy" for t in spec.damage_tags) != want:
            continue
        return spec
    raise ConfigurationError(f"no held-out {family} situation outside the corpus")


def forward_kinematics(angles) -> np.ndarray:
    """End-effector position of a planar arm with unit links."""
    cum = np.cumsum(angles, axis=-1)
    return np.stack([np.cos(cum).sum(axis=-1), np.sin(cum).sum(axis=-1)], axis=-1)


def arm_goal(n_joints: int) -> np.ndarray:
    return np.full(2, 0.8 * n_joints / np.sqrt(2.0))


def initial_state(spec: SituationSpec) -> np.ndarray:
    """Deterministic start state for control episodes."""
    if spec.family == "arm":
        angles = np.zeros(spec.n_joints)
        return np.concatenate([angles, forward_kinematics(angles)])
    if spec.family == "pointmass":
        return np.zeros(4)
    return np.zeros(1)


def random_state(spec: SituationSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.family == "arm":
        angles = wrap_angle(rng.uniform(-np.pi, np.pi, spec.n_joints))
        return np.concatenate([angles, forward_kinematics(angles)])
    if spec.family == "pointmass":
        return np.concatenate([rng.uniform(-3.0, 3.0, 2), rng.uniform(-1.0, 1.0, 2)])
    return rng.uniform(*SINE_X_RANGE, size=1)


def step(spec: SituationSpec, state, action) -> np.ndarray:
    """Ground-truth transition; actions are clipped to the family bounds."""
    state = np.asarray(state, dtype=float)
    action = np.asarray(action, dtype=float).reshape(-1)
    if not (np.isfinite(state).all() and np.isfinite(action).all()):
        raise InputError("non-finite state or action")
    if spec.family == "sine":
        p = spec.params
        return np.array([p["amplitude"] * np.sin(p["frequency"] * state[0] + p["phase"])])
    low, high = action_bounds(spec.family, spec.n_joints)
    action = np.clip(action, low, high)
    if spec.family == "arm":
        n = spec.n_joints
        angles = wrap_angle(state[:n] + spec.gains * action * DT)
        return np.concatenate([angles, forward_kinematics(angles)])
    vel = (1.0 - POINTMASS_MU * spec.params["friction"] * DT) * state[2:] + action * DT
    pos = state[:2] + vel * DT
    return np.concatenate([pos, vel])


def reward(family: str, state, action, next_state) -> np.ndarray:
    """Negative distance of the resulting position to the family goal.

    Vectorized over leading axes of ``next_state``.
    """
    next_state = np.asarray(next_state, dtype=float)
    if family == "arm":
        n = next_state.shape[-1] - 2
        return -np.linalg.norm(next_state[..., n:n + 2] - arm_goal(n), axis=-1)
    if family == "pointmass":
        return -np.linalg.norm(next_state[..., :2] - POINTMASS_GOAL, axis=-1)
    if family == "sine":
        raise UsageError("the sine family is a regression task and has no reward")
    raise ConfigurationError(f"unknown family {family!r}")


def reward_fn_for(family: str):
    def fn(state, action, next_state):
        return reward(family, state, action, next_state)
    return fn


@dataclass(frozen=True)
class CollectionConfig:
    n_transitions: int
    rng_seed: int = 0
    reset_every: int = RESET_EVERY

    def __post_init__(self):
        if self.n_transitions < 1:
            raise ConfigurationError("n_transitions must be >= 1")


def collect_random_dataset(spec: SituationSpec, cfg: CollectionConfig,
                           situation_index=None) -> TransitionDataset:
    """Uniformly random actions; control families reset to a random state every ``cfg.reset_every`` steps."""
    rng = np.random.default_rng(cfg.rng_seed)
    sd, ad = spec_dims(spec)
    if spec.family == "sine":
        xs = rng.uniform(*SINE_X_RANGE, size=(cfg.n_transitions, 1))
        ys = np.array([step(spec, x, ()) for x in xs])
        return TransitionDataset(xs, np.zeros((cfg.n_transitions, 0)), ys, situation_index)
    low, high = action_bounds(spec.family, spec.n_joints)
    out = []
    state = None
    for t in range(cfg.n_transitions):
        if t % cfg.reset_every == 0:
            state = random_state(spec, rng)
        action = rng.uniform(low, high)
        nxt = step(spec, state, action)
        out.append(Transition(state, action, nxt))
        state = nxt
    return TransitionDataset.from_transitions(out, sd, ad, situation_index)
