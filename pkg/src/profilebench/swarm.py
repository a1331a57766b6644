"""Particle swarm estimation of reaction-network rate constants.

The swarm searches log10 rate space.  Each configuration's three weights are
divided by their sum before use, so only their relative influence matters.
"""
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import rankvec
from .exceptions import NumericalError, ValidationError
from .reaction import (
    MomentSummary,
    PopulationSpec,
    ReactionNetwork,
    batch_moment_cost,
    compute_moments,
    sample_population,
    simulate_batch,
)

DEFAULT_LOG_BOUNDS = (-3.0, 3.0)
# RK4 steps per unit of the last observed time used inside the estimator
ESTIMATION_STEPS = 100


class Coefficients(NamedTuple):
    particle_best: float
    global_best: float
    inertia: float


@dataclass(frozen=True)
class SwarmConfig:
    label: str
    particle_best_weight: float
    global_best_weight: float
    inertia: float

    def __post_init__(self):
        if min(self.particle_best_weight, self.global_best_weight, self.inertia) <= 0:
            raise ValidationError(f"config {self.label!r}: all PSO weights must be positive")

    @property
    def normalized(self):
        total = self.particle_best_weight + self.global_best_weight + self.inertia
        return Coefficients(
            self.particle_best_weight / total, self.global_best_weight / total, self.inertia / total
        )

    def to_dict(self):
        return {
            "label": self.label,
            "particle_best_weight": self.particle_best_weight,
            "global_best_weight": self.global_best_weight,
            "inertia": self.inertia,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            str(d["label"]), float(d["particle_best_weight"]), float(d["global_best_weight"]), float(d["inertia"])
        )


STANDARD_CONFIGS = (
    SwarmConfig("A", 3.0, 1.0, 6.0),
    SwarmConfig("B", 4.0, 2.0, 5.0),
    SwarmConfig("C", 5.0, 3.0, 4.0),
    SwarmConfig("D", 5.0, 2.0, 10.0),
    SwarmConfig("E", 3.0, 4.0, 3.0),
)


@dataclass
class SwarmResult:
    best_theta: np.ndarray
    best_cost: float
    cost_history: list
    seed: int
    initial_best_cost: float = np.inf
    initial_mean_cost: float = np.inf


def pso_run(
    cost: Callable,
    dim: int,
    bounds,
    config: SwarmConfig,
    particles: int = 200,
    epochs: int = 20,
    seed: int = 0,
    vectorized: bool = False,
    callback: Optional[Callable] = None,
) -> SwarmResult:
    """Minimise ``cost`` over a box with a global-best particle swarm.

    ``bounds`` is a ``(low, high)`` pair of scalars or per-dimension arrays.
    With ``vectorized=True`` the cost receives the whole ``(particles, dim)``
    position matrix and returns one cost per row.  Non-finite costs count
    as +inf.  ``callback(epoch, positions, costs)`` runs after each epoch.
    """
    if dim < 1 or particles < 2 or epochs < 1:
        raise ValidationError("need dim >= 1, particles >= 2 and epochs >= 1")
    low = np.broadcast_to(np.asarray(bounds[0], dtype=float), (dim,)).copy()
    high = np.broadcast_to(np.asarray(bounds[1], dtype=float), (dim,)).copy()
    if np.any(low >= high):
        raise ValidationError("every lower bound must be below its upper bound")
    c1, c2, w = config.normalized
    vmax = 0.5 * (high - low)

    def evaluate(x):
        if vectorized:
            f = np.asarray(cost(x), dtype=float).reshape(len(x))
        else:
            f = np.array([cost(row) for row in x], dtype=float)
        return np.where(np.isfinite(f), f, np.inf)

    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, size=(particles, dim))
    v = np.zeros_like(x)
    f = evaluate(x)
    if not np.isfinite(f).any():
        raise NumericalError("every particle of the initial swarm has a non-finite cost")

    pbest, pbest_f = x.copy(), f.copy()
    g = int(np.argmin(pbest_f))
    gbest, gbest_f = pbest[g].copy(), float(pbest_f[g])
    initial_best = gbest_f
    initial_mean = float(f[np.isfinite(f)].mean())

    history = []
    for epoch in range(epochs):
        r1 = rng.random((particles, dim))
        r2 = rng.random((particles, dim))
        v = w * v + c1 * r1 * (pbest - x) + c2 * r2 * (gbest - x)
        np.clip(v, -vmax, vmax, out=v)
        x = np.clip(x + v, low, high)
        f = evaluate(x)
        better = f < pbest_f
        pbest[better] = x[better]
        pbest_f[better] = f[better]
        g = int(np.argmin(pbest_f))
        if pbest_f[g] < gbest_f:
            gbest, gbest_f = pbest[g].copy(), float(pbest_f[g])
        history.append(gbest_f)
        if callback is not None:
            callback(epoch, x.copy(), f.copy())

    return SwarmResult(gbest, gbest_f, history, seed, initial_best, initial_mean)


class MomentMatchingPSO(BaseEstimator):
    """Fit rate constants to observed population moments with a particle swarm.

    Every candidate is scored on the same sampled cell population
    (``population_seed``), so the observed data generated from that
    population at the true rates has cost exactly zero there.

    Parameters
    ----------
    network : ReactionNetwork
    population : PopulationSpec
        Initial-condition distribution; its ``times`` are ignored in favour
        of the observed time points.
    config : SwarmConfig, default Table-5 configuration A
    particles, epochs : int
    log_bounds : (float, float)
        Search box in log10 units, shared by every parameter.
    step : float or None
        RK4 step; ``None`` uses ``last_time / 100``.
    population_seed : int
    random_state : int
        Seed of the swarm itself.
    """

    def __init__(
        self,
        network=None,
        population=None,
        config=None,
        particles=200,
        epochs=20,
        log_bounds=DEFAULT_LOG_BOUNDS,
        step=None,
        population_seed=0,
        random_state=0,
    ):
        self.network = network
        self.population = population
        self.config = config
        self.particles = particles
        self.epochs = epochs
        self.log_bounds = log_bounds
        self.step = step
        self.population_seed = population_seed
        self.random_state = random_state

    def _step(self, times):
        if self.step is not None:
            return float(self.step)
        return float(times[-1]) / ESTIMATION_STEPS if times[-1] > 0 else 1.0

    def _states(self):
        return sample_population(self.population, self.population_seed)

    def fit(self, observed: MomentSummary, y=None):
        if not isinstance(self.network, ReactionNetwork) or not isinstance(self.population, PopulationSpec):
            raise ValidationError("MomentMatchingPSO needs a ReactionNetwork and a PopulationSpec")
        if observed.n_species != self.network.n_species:
            raise ValidationError(
                f"observed data has {observed.n_species} species, network has {self.network.n_species}"
            )
        config = self.config if self.config is not None else STANDARD_CONFIGS[0]
        states = self._states()
        times = observed.times
        step = self._step(times)
        network = self.network

        def cost(log_theta):
            traj, _ = simulate_batch(network, 10.0**log_theta, states, times, step)
            return batch_moment_cost(observed, traj)

        result = pso_run(
            cost,
            network.n_params,
            self.log_bounds,
            config,
            particles=self.particles,
            epochs=self.epochs,
            seed=self.random_state,
            vectorized=True,
        )
        result.best_theta = 10.0 ** np.asarray(result.best_theta)
        self.result_ = result
        self.best_theta_ = result.best_theta
        self.best_cost_ = result.best_cost
        self.cost_history_ = result.cost_history
        self.times_ = np.asarray(times, dtype=float)
        return self

    def predict(self, times=None):
        """Moments of the population evolved under the fitted rates."""
        check_is_fitted(self, "best_theta_")
        times = self.times_ if times is None else np.asarray(times, dtype=float)
        traj, fail = simulate_batch(self.network, self.best_theta_[None, :], self._states(), times, self._step(times))
        if not np.isnan(fail[0]):
            raise NumericalError(f"fitted rates diverge at t={fail[0]:g}")
        return compute_moments([traj[0, t].T for t in range(len(times))], times)

    def score(self, observed, y=None):
        """Negative moment cost, so larger is better as sklearn expects."""
        from .reaction import moment_cost

        return -moment_cost(observed, self.predict(observed.times))


def estimate_parameters(
    network,
    observed,
    population,
    config,
    seed,
    *,
    population_seed=0,
    particles=200,
    epochs=20,
    log_bounds=DEFAULT_LOG_BOUNDS,
    step=None,
):
    """Run one swarm fit and return its SwarmResult (best_theta in linear units)."""
    est = MomentMatchingPSO(
        network=network,
        population=population,
        config=config,
        particles=particles,
        epochs=epochs,
        log_bounds=log_bounds,
        step=step,
        population_seed=population_seed,
        random_state=seed,
    )
    return est.fit(observed).result_


@dataclass
class PsoDataset:
    name: str
    network: ReactionNetwork
    observed: MomentSummary
    population: PopulationSpec
    population_seed: int = 0


@dataclass
class ReplicateReport:
    dataset: str
    configs: list
    mean_cost: dict
    avg_std_dev: dict
    cost_ranking: rankvec.RankingVector
    spread_ranking: rankvec.RankingVector
    results: dict = field(default_factory=dict, repr=False)

    def rows(self):
        for label in self.configs:
            yield (
                self.dataset,
                label,
                self.mean_cost[label],
                self.avg_std_dev[label],
                self.cost_ranking.rank_of(label),
                self.spread_ranking.rank_of(label),
            )


def replicate_seed(base_seed, dataset_index, config_index, run_index):
    """Stable 63-bit seed derived from the replicate's coordinates."""
    ss = np.random.SeedSequence([int(base_seed), int(dataset_index), int(config_index), int(run_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _one_replicate(ds, config, seed, particles, epochs, log_bounds, step):
    return estimate_parameters(
        ds.network,
        ds.observed,
        ds.population,
        config,
        seed,
        population_seed=ds.population_seed,
        particles=particles,
        epochs=epochs,
        log_bounds=log_bounds,
        step=step,
    )


def replicate_study(
    configs,
    datasets,
    runs=30,
    base_seed=0,
    *,
    particles=200,
    epochs=20,
    log_bounds=DEFAULT_LOG_BOUNDS,
    step=None,
    n_jobs=1,
):
    """Repeat every configuration ``runs`` times per dataset and rank the configurations.

    Returns ``(reports, distances)``: one ReplicateReport per dataset, and
    rows ``(base_dataset, dataset, metric, euclidean, kendall_raw,
    kendall_norm)`` comparing the datasets' cost and spread rankings.
    """
    configs = list(configs)
    if len(configs) < 2:
        raise ValidationError("a replicate study needs at least two configurations")
    if runs < 1:
        raise ValidationError("runs must be at least 1")
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise ValidationError("configuration labels must be unique")

    jobs = [
        (d, c, r)
        for d in range(len(datasets))
        for c in range(len(configs))
        for r in range(runs)
    ]
    outputs = Parallel(n_jobs=n_jobs)(
        delayed(_one_replicate)(
            datasets[d], configs[c], replicate_seed(base_seed, d, c, r), particles, epochs, log_bounds, step
        )
        for d, c, r in jobs
    )
    by_key = dict(zip(jobs, outputs))

    reports = []
    for d, ds in enumerate(datasets):
        mean_cost, spread, results = {}, {}, {}
        for c, config in enumerate(configs):
            res = [by_key[(d, c, r)] for r in range(runs)]
            thetas = np.array([x.best_theta for x in res])
            mean_cost[config.label] = float(np.mean([x.best_cost for x in res]))
            spread[config.label] = float(np.mean(np.std(thetas, axis=0)))
            results[config.label] = res
        cost_rank = rankvec.rank_models(list(mean_cost.items()), "asc", labels, ds.name, "cost")
        spread_rank = rankvec.rank_models(list(spread.items()), "asc", labels, ds.name, "spread")
        reports.append(ReplicateReport(ds.name, labels, mean_cost, spread, cost_rank, spread_rank, results))

    distances = []
    for metric in ("cost", "spread"):
        vectors = {
            r.dataset: (r.cost_ranking if metric == "cost" else r.spread_ranking) for r in reports
        }
        for base in vectors:
            for other in vectors:
                raw, norm = rankvec.kendall_tau_distance(vectors[base], vectors[other])
                distances.append(
                    (base, other, metric, rankvec.euclidean_distance(vectors[base], vectors[other]), raw, norm)
                )
    return reports, distances


REPORT_HEADER = ("dataset", "config", "mean_cost", "avg_std_dev", "cost_rank", "spread_rank")
DISTANCE_HEADER = ("base_dataset", "dataset", "metric", "euclidean", "kendall_raw", "kendall_norm")
