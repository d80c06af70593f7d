"""gradroll: influence-tracked training and rollback explanations for neural
matrix factorization link prediction."""

__version__ = "0.1.0"

from .errors import (ArtifactMismatchError, ConfigError, GradrollError,
                     ParseError, TrainingDivergedError, VocabError)
from .explain import Explanation, InfluenceScore, influence_delta
from .ledger import InfluenceLedger, RollbackSlice, lookup, rollback
from .model import Parameters, RankMetrics, predict_top, rank_metrics, score, softmax_prob
from .training import TrainConfig, UpdateDelta, train
from .triples import AdjacencyIndex, Triple, TripleStore, Vocab, load_triples

__all__ = [
    "__version__",
    "ArtifactMismatchError", "ConfigError", "GradrollError", "ParseError",
    "TrainingDivergedError", "VocabError",
    "Explanation", "InfluenceScore", "influence_delta",
    "InfluenceLedger", "RollbackSlice", "lookup", "rollback",
    "Parameters", "RankMetrics", "predict_top", "rank_metrics", "score",
    "softmax_prob",
    "TrainConfig", "UpdateDelta", "train",
    "AdjacencyIndex", "Triple", "TripleStore", "Vocab", "load_triples",
]
