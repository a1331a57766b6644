"""Mass-action reaction networks, population simulation and moment matching.

A population of cells is drawn from a multivariate lognormal, every cell is
evolved under the same rate constants with fixed-step RK4, and the
per-time-point means, variances and covariances of the population summarise
the result.  ``moment_cost`` compares two such summaries.
"""
import math
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np

from .exceptions import DivergenceError, ValidationError

DEFAULT_STEPS = 1000
_PSD_TOL = 1e-10


@dataclass(frozen=True)
class Reaction:
    reactants: dict
    products: dict
    theta_index: int

    def __post_init__(self):
        for name, stoich in (("reactant", self.reactants), ("product", self.products)):
            for sp, n in stoich.items():
                if int(n) != n or n < 0:
                    raise ValidationError(f"{name} stoichiometry of {sp!r} must be a nonnegative integer")


@dataclass
class ReactionNetwork:
    species: tuple
    reactions: list
    n_params: int
    name: str = ""

    def __post_init__(self):
        self.species = tuple(str(s) for s in self.species)
        if len(set(self.species)) != len(self.species):
            raise ValidationError("species names must be unique")
        self.reactions = [r if isinstance(r, Reaction) else Reaction(**r) for r in self.reactions]
        known = set(self.species)
        for r in self.reactions:
            if not 0 <= r.theta_index < self.n_params:
                raise ValidationError(f"theta_index {r.theta_index} outside [0, {self.n_params})")
            for sp in (*r.reactants, *r.products):
                if sp not in known:
                    raise ValidationError(f"reaction refers to unknown species {sp!r}")

    @property
    def n_species(self):
        return len(self.species)

    @cached_property
    def _arrays(self):
        index = {s: i for i, s in enumerate(self.species)}
        n_react = len(self.reactions)
        width = max([1] + [len(r.reactants) for r in self.reactions])
        idx = np.full((n_react, width), -1, dtype=np.int64)
        cnt = np.zeros((n_react, width), dtype=np.int64)
        net = np.zeros((n_react, self.n_species))
        theta_idx = np.zeros(n_react, dtype=np.int64)
        for k, r in enumerate(self.reactions):
            for j, (sp, n) in enumerate(r.reactants.items()):
                idx[k, j] = index[sp]
                cnt[k, j] = int(n)
                net[k, index[sp]] -= n
            for sp, n in r.products.items():
                net[k, index[sp]] += n
            theta_idx[k] = r.theta_index
        return idx, cnt, net, theta_idx

    def stoichiometry(self):
        """Net change matrix, one row per reaction."""
        return self._arrays[2].copy()

    def to_dict(self):
        return {
            "name": self.name,
            "species": list(self.species),
            "reactions": [
                {"reactants": dict(r.reactants), "products": dict(r.products), "theta_index": r.theta_index}
                for r in self.reactions
            ],
            "n_params": self.n_params,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                species=d["species"],
                reactions=[
                    Reaction(
                        reactants={k: int(v) for k, v in r.get("reactants", {}).items()},
                        products={k: int(v) for k, v in r.get("products", {}).items()},
                        theta_index=int(r["theta_index"]),
                    )
                    for r in d["reactions"]
                ],
                n_params=int(d["n_params"]),
                name=d.get("name", ""),
            )
        except KeyError as exc:
            raise ValidationError(f"network definition is missing field {exc}") from None


def reversible_binding():
    """N1: A + B <-> C with forward rate theta[0] and reverse rate theta[1]."""
    return ReactionNetwork(
        species=("A", "B", "C"),
        reactions=[
            Reaction({"A": 1, "B": 1}, {"C": 1}, 0),
            Reaction({"C": 1}, {"A": 1, "B": 1}, 1),
        ],
        n_params=2,
        name="N1",
    )


def linear_cascade():
    """N2: A -> B -> C with rates theta[0], theta[1]."""
    return ReactionNetwork(
        species=("A", "B", "C"),
        reactions=[
            Reaction({"A": 1}, {"B": 1}, 0),
            Reaction({"B": 1}, {"C": 1}, 1),
        ],
        n_params=2,
        name="N2",
    )


BUILTIN_NETWORKS = {"N1": reversible_binding, "N2": linear_cascade}


@dataclass
class PopulationSpec:
    log_mean: np.ndarray
    log_cov: np.ndarray
    n_cells: int
    times: np.ndarray

    def __post_init__(self):
        self.log_mean = np.asarray(self.log_mean, dtype=float)
        self.log_cov = np.asarray(self.log_cov, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        s = self.log_mean.shape[0]
        if self.log_mean.ndim != 1 or self.log_cov.shape != (s, s):
            raise ValidationError("log_cov must be a square matrix matching log_mean")
        if not np.allclose(self.log_cov, self.log_cov.T, atol=1e-12):
            raise ValidationError("log_cov must be symmetric")
        if int(self.n_cells) < 1:
            raise ValidationError("n_cells must be positive")
        self.n_cells = int(self.n_cells)
        _check_times(self.times)

    def to_dict(self):
        return {
            "log_mean": self.log_mean.tolist(),
            "log_cov": self.log_cov.tolist(),
            "n_cells": self.n_cells,
            "times": self.times.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["log_mean"], d["log_cov"], d["n_cells"], d["times"])


@dataclass
class MomentSummary:
    """Per-time population moments; covariances hold pairs i<j row-major."""

    times: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    covariances: np.ndarray = field(default=None)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        n_t, n_s = self.means.shape
        n_pairs = n_s * (n_s - 1) // 2
        if self.covariances is None:
            self.covariances = np.zeros((n_t, n_pairs))
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(n_t, n_pairs)
        if self.variances.shape != self.means.shape or self.times.shape != (n_t,):
            raise ValidationError("moment arrays have inconsistent shapes")

    @property
    def n_species(self):
        return self.means.shape[1]

    def covariance_matrix(self, t):
        s = self.n_species
        out = np.diag(self.variances[t]).astype(float)
        i, j = np.triu_indices(s, k=1)
        out[i, j] = self.covariances[t]
        out[j, i] = self.covariances[t]
        return out

    def to_dict(self):
        return {
            "times": self.times.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["times"], d["means"], d["variances"], d.get("covariances"))
        except KeyError as exc:
            raise ValidationError(f"observed data is missing field {exc}") from None


def _check_times(times):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValidationError("times must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(times)) or times[0] < 0 or np.any(np.diff(times) <= 0):
        raise ValidationError("times must be finite, nonnegative and strictly increasing")
    return times


def _check_theta(network, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != network.n_params:
        raise ValidationError(f"expected {network.n_params} rate constants, got {theta.shape[-1]}")
    if np.any(theta < 0):
        raise ValidationError("rate constants must be nonnegative")
    return theta


def derivatives(network, state, theta):
    """Mass-action time derivative of ``state``."""
    state = np.asarray(state, dtype=float)
    theta = _check_theta(network, theta)
    if state.shape != (network.n_species,):
        raise ValidationError(f"state must have {network.n_species} entries")
    out = np.zeros(network.n_species)
    idx, cnt, net, theta_idx = network._arrays
    for k in range(len(network.reactions)):
        rate = theta[theta_idx[k]]
        for sp, n in zip(idx[k], cnt[k]):
            if sp >= 0:
                rate *= state[sp] ** n
        out += net[k] * rate
    return out


@numba.njit(cache=True)
def _deriv(x, theta, idx, cnt, net, theta_idx, out, rate):
    n_species, n_cells = x.shape
    out[:] = 0.0
    for r in range(net.shape[0]):
        k = theta[theta_idx[r]]
        for c in range(n_cells):
            rate[c] = k
        for j in range(idx.shape[1]):
            sp = idx[r, j]
            if sp < 0:
                break
            for _ in range(cnt[r, j]):
                for c in range(n_cells):
                    rate[c] *= x[sp, c]
        for s in range(n_species):
            a = net[r, s]
            if a != 0.0:
                for c in range(n_cells):
                    out[s, c] += a * rate[c]


@numba.njit(cache=True)
def _rk4_kernel(states0, thetas, idx, cnt, net, theta_idx, steps, step_end, record_at):
    n_part = thetas.shape[0]
    n_species, n_cells = states0.shape
    n_rec = record_at.shape[0]
    out = np.full((n_part, n_rec, n_species, n_cells), np.nan)
    fail = np.full(n_part, np.nan)
    x = np.empty((n_species, n_cells))
    tmp = np.empty((n_species, n_cells))
    k1 = np.empty((n_species, n_cells))
    k2 = np.empty((n_species, n_cells))
    k3 = np.empty((n_species, n_cells))
    k4 = np.empty((n_species, n_cells))
    rate = np.empty(n_cells)
    for p in range(n_part):
        th = thetas[p]
        x[:] = states0
        rec = 0
        while rec < n_rec and record_at[rec] == 0:
            out[p, rec] = x
            rec += 1
        for n in range(steps.shape[0]):
            h = steps[n]
            _deriv(x, th, idx, cnt, net, theta_idx, k1, rate)
            for s in range(n_species):
                for c in range(n_cells):
                    tmp[s, c] = x[s, c] + 0.5 * h * k1[s, c]
            _deriv(tmp, th, idx, cnt, net, theta_idx, k2, rate)
            for s in range(n_species):
                for c in range(n_cells):
                    tmp[s, c] = x[s, c] + 0.5 * h * k2[s, c]
            _deriv(tmp, th, idx, cnt, net, theta_idx, k3, rate)
            for s in range(n_species):
                for c in range(n_cells):
                    tmp[s, c] = x[s, c] + h * k3[s, c]
            _deriv(tmp, th, idx, cnt, net, theta_idx, k4, rate)
            bad = False
            for s in range(n_species):
                for c in range(n_cells):
                    v = x[s, c] + h / 6.0 * (k1[s, c] + 2.0 * k2[s, c] + 2.0 * k3[s, c] + k4[s, c])
                    if not math.isfinite(v):
                        bad = True
                    x[s, c] = v if v > 0.0 else 0.0
            if bad:
                fail[p] = step_end[n]
                break
            while rec < n_rec and record_at[rec] == n + 1:
                out[p, rec] = x
                rec += 1
    return out, fail


def _schedule(times, step):
    """Step sizes from t=0 landing on each requested time, plus record indices."""
    steps, ends, record_at = [], [], []
    t_prev = 0.0
    for t in times:
        span = t - t_prev
        if span > 0:
            n = max(1, math.ceil(span / step - 1e-9))
            sizes = [step] * (n - 1) + [span - (n - 1) * step]
            for h in sizes:
                steps.append(h)
                ends.append((ends[-1] if ends else 0.0) + h)
            ends[-1] = float(t)
        record_at.append(len(steps))
        t_prev = t
    return np.array(steps, dtype=float), np.array(ends, dtype=float), np.array(record_at, dtype=np.int64)


def default_step(times, n_steps=DEFAULT_STEPS):
    last = float(np.asarray(times)[-1])
    return last / n_steps if last > 0 else 1.0


def simulate_batch(network, thetas, initial_states, times, step=None):
    """Evolve a shared cell population under many rate vectors at once.

    Returns ``(trajectories, fail_times)`` where trajectories has shape
    ``(n_thetas, n_times, n_species, n_cells)`` and ``fail_times`` is NaN for
    rows that stayed finite, otherwise the time at which they diverged.
    Diverged rows are filled with NaN.
    """
    times = _check_times(times)
    thetas = np.atleast_2d(_check_theta(network, thetas))
    states = np.asarray(initial_states, dtype=float)
    if states.ndim != 2 or states.shape[1] != network.n_species:
        raise ValidationError(f"initial states must have shape (n_cells, {network.n_species})")
    if np.any(states < 0) or not np.all(np.isfinite(states)):
        raise ValidationError("initial states must be finite and nonnegative")
    step = default_step(times) if step is None else float(step)
    if not step > 0:
        raise ValidationError("step must be positive")
    steps, ends, record_at = _schedule(times, step)
    idx, cnt, net, theta_idx = network._arrays
    return _rk4_kernel(
        np.ascontiguousarray(states.T), np.ascontiguousarray(thetas), idx, cnt, net, theta_idx, steps, ends, record_at
    )


def integrate(network, theta, initial_state, times, step=None):
    """Classical RK4 from t=0; one output row per requested time.

    The default step is ``times[-1] / 1000``.  The last step before each
    requested time is shortened so the time is hit exactly.  States are
    clamped at zero after every step.
    """
    initial_state = np.asarray(initial_state, dtype=float)
    traj, fail = simulate_batch(network, np.asarray(theta, dtype=float)[None, :], initial_state[None, :], times, step)
    if not np.isnan(fail[0]):
        raise DivergenceError(f"integration diverged at t={fail[0]:g}", time=float(fail[0]))
    return traj[0, :, :, 0]


def simulate_population(network, theta, initial_states, times, step=None):
    """Evolve every cell; returns a list of ``(n_cells, n_species)`` matrices, one per time."""
    traj, fail = simulate_batch(network, np.asarray(theta, dtype=float)[None, :], initial_states, times, step)
    if not np.isnan(fail[0]):
        raise DivergenceError(f"integration diverged at t={fail[0]:g}", time=float(fail[0]))
    return [traj[0, t].T.copy() for t in range(traj.shape[1])]


def _psd_cholesky(cov, tol=_PSD_TOL):
    """Lower Cholesky factor that tolerates zero pivots (semi-definite input)."""
    n = cov.shape[0]
    scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
    L = np.zeros_like(cov)
    for j in range(n):
        d = cov[j, j] - L[j, :j] @ L[j, :j]
        if d < -tol * scale:
            raise ValidationError("log_cov is not positive semi-definite")
        if d <= tol * scale:
            resid = cov[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]
            if np.any(np.abs(resid) > math.sqrt(tol) * scale):
                raise ValidationError("log_cov is not positive semi-definite")
            continue
        L[j, j] = math.sqrt(d)
        L[j + 1 :, j] = (cov[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return L


def sample_population(spec, seed):
    """Initial states: exp of correlated normal draws, one row per cell."""
    L = _psd_cholesky(spec.log_cov)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((spec.n_cells, spec.log_mean.shape[0]))
    return np.exp(spec.log_mean + z @ L.T)


def _moments(traj):
    # traj (..., T, S, C) -> means, variances, covariances over the cell axis
    means = traj.mean(axis=-1)
    centered = traj - means[..., None]
    variances = (centered * centered).mean(axis=-1)
    n_s = traj.shape[-2]
    i, j = np.triu_indices(n_s, k=1)
    cov = (centered[..., i, :] * centered[..., j, :]).mean(axis=-1)
    return means, variances, cov


def compute_moments(states_per_time, times=None):
    """Population (divide-by-n) moments of each state matrix."""
    if len(states_per_time) == 0:
        raise ValidationError("no state matrices given")
    mats = [np.atleast_2d(np.asarray(m, dtype=float)) for m in states_per_time]
    n_s = mats[0].shape[1]
    for m in mats:
        if m.shape[0] < 1 or m.size == 0:
            raise ValidationError("state matrix has no rows")
        if m.shape[1] != n_s or m.shape[0] != mats[0].shape[0]:
            raise ValidationError("state matrices differ in shape")
    traj = np.ascontiguousarray(np.stack([m.T for m in mats]))
    means, variances, cov = _moments(traj)
    if times is None:
        times = np.arange(len(mats), dtype=float)
    return MomentSummary(times, means, variances, cov)


def _check_same_shape(a, b):
    if a.means.shape != b.means.shape or a.covariances.shape != b.covariances.shape:
        raise ValidationError("moment summaries differ in shape")
    if not np.allclose(a.times, b.times):
        raise ValidationError("moment summaries use different time points")


def moment_cost(observed, simulated):
    """Sum of squared differences of means, variances and covariances."""
    _check_same_shape(observed, simulated)
    return float(
        np.sum((observed.means - simulated.means) ** 2)
        + np.sum((observed.variances - simulated.variances) ** 2)
        + np.sum((observed.covariances - simulated.covariances) ** 2)
    )


def batch_moment_cost(observed, trajectories):
    """Moment cost of each row of a ``simulate_batch`` result; NaN rows give inf."""
    # stiff candidates can blow up to huge finite states; those overflow to inf on purpose
    with np.errstate(over="ignore", invalid="ignore"):
        means, variances, cov = _moments(trajectories)
        cost = (
            np.sum((means - observed.means) ** 2, axis=(-2, -1))
            + np.sum((variances - observed.variances) ** 2, axis=(-2, -1))
            + np.sum((cov - observed.covariances) ** 2, axis=(-2, -1))
        )
    return np.where(np.isfinite(cost), cost, np.inf)


def observe(network, theta, spec, seed, step=None):
    """Noiseless synthetic observation: moments of a sampled population evolved under ``theta``."""
    states = sample_population(spec, seed)
    traj, fail = simulate_batch(network, np.asarray(theta, dtype=float)[None, :], states, spec.times, step)
    if not np.isnan(fail[0]):
        raise DivergenceError(f"integration diverged at t={fail[0]:g}", time=float(fail[0]))
    means, variances, cov = _moments(traj[0])
    return MomentSummary(spec.times, means, variances, cov)
