"""Dataset-specific profiling: ranking distances, moment-matching PSO and
early prediction of final accuracy from weight statistics."""
from .boost import BoostParams, EvalReport, GBMRegressor, evaluate
from .exceptions import DivergenceError, NumericalError, ProfileBenchError, ValidationError
from .rankvec import RankingVector, euclidean_distance, kendall_tau_distance, rank_models
from .reaction import MomentSummary, PopulationSpec, ReactionNetwork, compute_moments, integrate, moment_cost
from .swarm import MomentMatchingPSO, SwarmConfig, SwarmResult, pso_run
from .tinynet import HyperConfig, SynthDatasetSpec, TinyMLPClassifier
from .weightstats import RunManifest, WeightSnapshot, WeightStatsTransformer, layer_stats, snapshot_features

__version__ = "0.1.0"
