"""Embedding-conditioned dynamics-model meta-learning with fast online adaptation and MPC."""
from .errors import (ConfigurationError, DivergedUpdateError, FamleError, InputError, PlanningFailure,
                     UsageError)
from .model import (EmbeddingTable, InnerUpdateConfig, ModelParams, Normalizer, Transition,
                    TransitionDataset, forward, grad, init_params, inner_update_U, loss_and_grad, nll_loss,
                    predict_next_state)
from .trainers import MetaConfig, MetaCorpus, MetaResult, famle_meta_train, maml_fo_train, reptile_train
from .adaptation import AdaptationConfig, AdaptedModel, ObservationWindow, adapt, select_embedding, window_push
from .mpc import MPCConfig, plan, rollout_score, run_episode

__version__ = "0.1.0"
