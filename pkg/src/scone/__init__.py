"""Graph collaborative filtering with score-based stochastic sampling.

A LightGCN-style graph encoder is trained jointly with a variance-exploding
diffusion score model. The score model synthesizes contrastive views of node
embeddings and hard negative items by stochastic sampling, and both feed the
recommender's ranking and contrastive losses.
"""

from scone.config import SdeSchedule, TrainConfig
from scone.data import Dataset, build_adjacency, load_interactions, split_dataset
from scone.encoder import GraphEncoder
from scone.score_model import ScoreNet
from scone.sampler import (generate_hard_negatives, generate_views, perturb,
                           reverse_sample)
from scone.synthetic import planted_interactions
from scone.training import FitResult, TrainState, fit

__all__ = [
    "SdeSchedule",
    "TrainConfig",
    "Dataset",
    "load_interactions",
    "split_dataset",
    "build_adjacency",
    "GraphEncoder",
    "ScoreNet",
    "perturb",
    "reverse_sample",
    "generate_views",
    "generate_hard_negatives",
    "planted_interactions",
    "TrainState",
    "FitResult",
    "fit",
]
