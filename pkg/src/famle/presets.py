"""Named experiment configurations used by the acceptance suite and shipped as YAML under ``configs/``."""
from __future__ import annotations

from .config import (AdaptationSection, ExperimentConfig, InnerSection, MethodSection, MPCSection, RunSection,
                     SineSection)


def sine_fig() -> ExperimentConfig:
    """Five sine situations, FAMLE with five embeddings against first-order MAML."""
    return ExperimentConfig(
        name="sine_fig", family="sine", n_situations=5, n_transitions=100, hidden_sizes=(40, 40),
        embed_dim=5, standardize_targets=False,
        famle=MethodSection(alpha_meta=1.0, beta_meta=0.5, outer_iterations=3000,
                            inner=InnerSection(k=5, alpha=0.01, beta=0.5, batch_size=10)),
        maml=MethodSection(alpha_meta=0.01, beta_meta=0.0, outer_iterations=3000,
                           inner=InnerSection(k=5, alpha=0.05, beta=0.0, batch_size=10)),
        sine=SineSection(point_counts=(0, 2, 3, 4, 5), grid_points=200, seeds=tuple(range(20))),
    )


def arm_identification() -> ExperimentConfig:
    """2-DoF arm, eight damage situations."""
    return ExperimentConfig(
        name="arm_identification", family="arm", n_joints=2, n_situations=8, n_transitions=500,
        hidden_sizes=(64, 64), embed_dim=5,
        famle=MethodSection(alpha_meta=1.0, beta_meta=0.5, outer_iterations=3000,
                            inner=InnerSection(k=5, alpha=0.01, beta=0.5, batch_size=256)),
    )


def arm_control() -> ExperimentConfig:
    """3-DoF arm, held-out situation with two damaged joints."""
    return ExperimentConfig(
        name="arm_control", family="arm", n_joints=3, n_situations=8, n_transitions=1000,
        hidden_sizes=(64, 64), embed_dim=5,
        famle=MethodSection(alpha_meta=1.0, beta_meta=0.5, outer_iterations=3000,
                            inner=InnerSection(k=5, alpha=0.01, beta=0.5, batch_size=256),
                            online=InnerSection(k=20, alpha=0.02, beta=0.5, batch_size=256)),
        # every method gets 20 online gradient steps per re-adaptation
        maml=MethodSection(alpha_meta=0.01, beta_meta=0.0, outer_iterations=3000,
                           inner=InnerSection(k=20, alpha=0.05, beta=0.0, batch_size=256)),
        scratch=MethodSection(outer_iterations=0, inner=InnerSection(k=20, alpha=0.05, beta=0.0, batch_size=256)),
        adaptation=AdaptationSection(window_size=64, adapt_every=10),
        mpc=MPCSection(horizon=15, n_candidates=500),
        run=RunSection(methods=("famle", "maml", "scratch"), episode_length=300, seeds=tuple(range(10)),
                       held_out_damages=2),
    )


PRESETS = {"sine_fig": sine_fig, "arm_identification": arm_identification, "arm_control": arm_control}
