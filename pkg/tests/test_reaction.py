import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from profilebench.exceptions import ValidationError
from profilebench.reaction import (
    MomentSummary,
    PopulationSpec,
    Reaction,
    ReactionNetwork,
    compute_moments,
    derivatives,
    integrate,
    linear_cascade,
    moment_cost,
    observe,
    reversible_binding,
    sample_population,
    simulate_batch,
)


def decay(k_index=0):
    return ReactionNetwork(("A", "B"), [Reaction({"A": 1}, {"B": 1}, k_index)], 1, "decay")


def decay_error(step, k=1.3, a0=2.0, t_end=1.0):
    traj = integrate(decay(), [k], [a0, 0.0], [t_end], step=step)
    return abs(traj[-1, 0] - a0 * math.exp(-k * t_end))


class TestDerivatives:
    def test_first_order(self):
        np.testing.assert_array_equal(derivatives(decay(), [2.0, 0.0], [1.0]), [-2.0, 2.0])

    def test_bimolecular(self):
        net = ReactionNetwork(("A", "B", "C"), [Reaction({"A": 1, "B": 1}, {"C": 1}, 0)], 1)
        np.testing.assert_allclose(derivatives(net, [1.0, 2.0, 0.0], [0.5]), [-1.0, -1.0, 1.0])

    def test_zero_state(self):
        assert not np.any(derivatives(reversible_binding(), np.zeros(3), [1.0, 2.0]))

    def test_second_order_in_one_species(self):
        net = ReactionNetwork(("A", "D"), [Reaction({"A": 2}, {"D": 1}, 0)], 1)
        # rate = theta * A^2; A consumed twice per event
        np.testing.assert_allclose(derivatives(net, [3.0, 0.0], [0.1]), [-1.8, 0.9])

    @given(
        arrays(float, 3, elements=st.floats(0, 10)),
        arrays(float, 2, elements=st.floats(0, 10)),
        st.sampled_from([reversible_binding, linear_cascade]),
    )
    def test_homogeneous_in_theta(self, x, theta, make):
        net = make()
        np.testing.assert_allclose(derivatives(net, x, 2 * theta), 2 * derivatives(net, x, theta), rtol=1e-12, atol=1e-300)

    def test_negative_theta_rejected(self):
        with pytest.raises(ValidationError):
            derivatives(decay(), [1.0, 0.0], [-1.0])

    def test_bad_network(self):
        with pytest.raises(ValidationError):
            ReactionNetwork(("A",), [Reaction({"A": 1}, {"Z": 1}, 0)], 1)
        with pytest.raises(ValidationError):
            ReactionNetwork(("A",), [Reaction({"A": 1}, {}, 3)], 1)

    def test_roundtrip(self):
        net = reversible_binding()
        again = ReactionNetwork.from_dict(net.to_dict())
        np.testing.assert_array_equal(again.stoichiometry(), net.stoichiometry())


class TestIntegrate:
    def test_matches_exponential(self):
        times = [0.25, 0.5, 1.0, 2.0]
        traj = integrate(decay(), [0.8], [3.0, 0.0], times, step=1e-3 * times[-1])
        expected = 3.0 * np.exp(-0.8 * np.asarray(times))
        np.testing.assert_allclose(traj[:, 0], expected, rtol=1e-6)

    def test_default_step_accuracy(self):
        traj = integrate(decay(), [0.8], [3.0, 0.0], [0.5, 2.0])
        np.testing.assert_allclose(traj[:, 0], 3.0 * np.exp(-0.8 * np.array([0.5, 2.0])), rtol=1e-6)

    @pytest.mark.parametrize("h", [0.2, 0.1, 0.05])
    def test_fourth_order(self, h):
        ratio = decay_error(h) / decay_error(h / 2)
        assert 8.0 <= ratio <= 32.0

    def test_zero_theta_constant(self):
        x0 = [1.5, 0.5, 2.0]
        traj = integrate(reversible_binding(), [0.0, 0.0], x0, [0.5, 1.0, 3.0])
        np.testing.assert_array_equal(traj, np.tile(x0, (3, 1)))

    def test_time_zero_returns_initial(self):
        traj = integrate(decay(), [1.0], [2.0, 0.0], [0.0, 1.0])
        np.testing.assert_array_equal(traj[0], [2.0, 0.0])

    def test_uneven_step_lands_on_times(self):
        # 0.3 does not divide 1.0; the last step is shortened
        a = integrate(decay(), [1.0], [1.0, 0.0], [1.0], step=0.3)
        assert abs(a[0, 0] - math.exp(-1.0)) < 1e-3

    @settings(max_examples=30, deadline=None)
    @given(
        arrays(float, 3, elements=st.floats(0.01, 5)),
        arrays(float, 2, elements=st.floats(0.0, 3)),
    )
    def test_binding_conservation(self, x0, theta):
        traj = integrate(reversible_binding(), theta, x0, [0.5, 1.0, 2.0])
        a, b, c = traj.T
        np.testing.assert_allclose(a + c, x0[0] + x0[2], atol=1e-9)
        np.testing.assert_allclose(b + c, x0[1] + x0[2], atol=1e-9)

    def test_cascade_conserves_total(self):
        traj = integrate(linear_cascade(), [1.2, 0.4], [2.0, 1.0, 0.5], [1.0, 5.0])
        np.testing.assert_allclose(traj.sum(axis=1), 3.5, atol=1e-9)

    def test_states_nonnegative(self):
        # a very stiff first step overshoots; clamping keeps it physical
        traj = integrate(decay(), [1000.0], [1.0, 0.0], [1.0], step=0.1)
        assert np.all(traj >= 0)

    def test_bad_times(self):
        with pytest.raises(ValidationError):
            integrate(decay(), [1.0], [1.0, 0.0], [1.0, 0.5])
        with pytest.raises(ValidationError):
            integrate(decay(), [1.0], [1.0, 0.0], [-1.0])

    def test_batch_matches_single(self):
        net = reversible_binding()
        x0 = np.array([[1.0, 2.0, 0.1], [0.5, 0.3, 1.0]])
        thetas = np.array([[1.0, 0.5], [0.2, 2.0]])
        traj, fail = simulate_batch(net, thetas, x0, [0.5, 1.5])
        assert np.all(np.isnan(fail))
        for p in range(2):
            for c in range(2):
                np.testing.assert_array_equal(traj[p, :, :, c], integrate(net, thetas[p], x0[c], [0.5, 1.5]))


def spec(cov, n=10, mean=(0.0, 0.5, -0.2)):
    return PopulationSpec(list(mean), cov, n, [0.0, 1.5])


class TestSampling:
    def test_degenerate(self):
        states = sample_population(spec(np.zeros((3, 3)), n=5), seed=1)
        np.testing.assert_allclose(states, np.tile(np.exp([0.0, 0.5, -0.2]), (5, 1)), rtol=1e-15)

    def test_clt_bound(self):
        cov = np.array([[0.09, 0.03, 0.0], [0.03, 0.16, 0.02], [0.0, 0.02, 0.04]])
        n = 10000
        logs = np.log(sample_population(spec(cov, n=n), seed=3))
        sigma = np.sqrt(np.diag(cov))
        assert np.all(np.abs(logs.mean(axis=0) - [0.0, 0.5, -0.2]) <= 4 * sigma / math.sqrt(n))

    def test_deterministic(self):
        cov = np.eye(3) * 0.1
        np.testing.assert_array_equal(sample_population(spec(cov), 5), sample_population(spec(cov), 5))

    def test_semidefinite_accepted(self):
        cov = np.array([[0.1, 0.1, 0.0], [0.1, 0.1, 0.0], [0.0, 0.0, 0.05]])
        logs = np.log(sample_population(spec(cov, n=50), seed=0))
        np.testing.assert_allclose(logs[:, 0] - 0.0, logs[:, 1] - 0.5, atol=1e-12)

    def test_indefinite_rejected(self):
        with pytest.raises(ValidationError):
            sample_population(spec(np.diag([0.1, -0.1, 0.1])), seed=0)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValidationError):
            spec(np.array([[0.1, 0.05, 0], [0, 0.1, 0], [0, 0, 0.1]]))


class TestMoments:
    def test_single_cell(self):
        m = compute_moments([np.array([[1.0, 2.0, 3.0]])])
        assert not m.variances.any() and not m.covariances.any()

    def test_population_variance(self):
        m = compute_moments([np.array([[0.0], [2.0]])])
        assert m.means[0, 0] == 1.0 and m.variances[0, 0] == 1.0

    def test_duplicate_column(self):
        rng = np.random.default_rng(0)
        x = rng.random(20)
        m = compute_moments([np.column_stack([x, x])])
        assert m.covariances[0, 0] == pytest.approx(m.variances[0, 0], rel=1e-12)

    def test_matches_numpy(self):
        rng = np.random.default_rng(1)
        x = rng.random((40, 4))
        m = compute_moments([x])
        full = np.cov(x.T, bias=True)
        np.testing.assert_allclose(m.covariance_matrix(0), full, rtol=1e-10, atol=1e-14)

    @given(arrays(float, (6, 3), elements=st.floats(0, 100)), st.randoms(use_true_random=False))
    def test_row_permutation_invariant(self, x, rnd):
        perm = list(range(6))
        rnd.shuffle(perm)
        a, b = compute_moments([x]), compute_moments([x[perm]])
        np.testing.assert_allclose(a.means, b.means, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(a.variances, b.variances, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(a.covariances, b.covariances, rtol=1e-9, atol=1e-9)
        assert np.all(a.variances >= 0)
        cm = a.covariance_matrix(0)
        bound = np.sqrt(np.outer(np.diag(cm), np.diag(cm))) + 1e-9
        assert np.all(np.abs(cm) <= bound * (1 + 1e-12))


def random_summary(rng):
    return MomentSummary([0.0, 1.0], rng.random((2, 3)), rng.random((2, 3)), rng.random((2, 3)))


class TestCost:
    def test_identical(self):
        s = random_summary(np.random.default_rng(0))
        assert moment_cost(s, s) == 0.0

    def test_single_mean(self):
        a = MomentSummary([0.0], [[1.0, 2.0]], [[0.5, 0.5]], [[0.1]])
        b = MomentSummary([0.0], [[2.0, 2.0]], [[0.5, 0.5]], [[0.1]])
        assert moment_cost(a, b) == 1.0

    @given(st.integers(0, 2**32 - 1))
    def test_symmetric_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_summary(rng), random_summary(rng)
        assert moment_cost(a, b) == moment_cost(b, a) >= 0.0

    def test_shape_mismatch(self):
        a = MomentSummary([0.0], [[1.0, 2.0]], [[0.5, 0.5]])
        b = MomentSummary([0.0], [[1.0, 2.0, 3.0]], [[0.5, 0.5, 0.5]])
        with pytest.raises(ValidationError):
            moment_cost(a, b)

    def test_observe_consistent_with_pipeline(self):
        net = reversible_binding()
        sp = spec(np.eye(3) * 0.05, n=30)
        obs = observe(net, [1.0, 0.5], sp, seed=2)
        states = sample_population(sp, 2)
        traj, _ = simulate_batch(net, [[1.0, 0.5]], states, sp.times)
        m = compute_moments([traj[0, t].T for t in range(2)], sp.times)
        assert moment_cost(obs, m) == 0.0

    def test_summary_roundtrip(self):
        s = random_summary(np.random.default_rng(4))
        t = MomentSummary.from_dict(s.to_dict())
        assert moment_cost(s, t) == 0.0
