import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from profilebench.exceptions import ValidationError
from profilebench.rankvec import (
    MetricTable,
    RankingVector,
    category_averages,
    distances_from_base,
    euclidean_distance,
    kendall_tau_distance,
    rank_models,
    ranking_vectors,
)

ORDER = ["InceptionV3", "VGG16", "EfficientNet", "ResNet50"]


def vec(ranks, order=None):
    return RankingVector("d", "m", tuple(ranks), tuple(order or [f"m{i}" for i in range(len(ranks))]))


def brute_kendall(a, b):
    n = len(a)
    bad = sum(1 for i, j in itertools.combinations(range(n), 2) if (a[i] - a[j]) * (b[i] - b[j]) < 0)
    return bad, bad / math.comb(n, 2)


permutations = st.integers(2, 9).flatmap(lambda n: st.permutations(list(range(1, n + 1))))


class TestRankModels:
    def test_leaf_defoliation_example(self):
        acc = [("EfficientNet", 0.95), ("ResNet50", 0.90), ("InceptionV3", 0.85), ("VGG16", 0.80)]
        assert rank_models(acc, "desc", ORDER).ranks == (3, 4, 1, 2)

    def test_sorted_input_gives_identity(self):
        acc = [(m, 1.0 - 0.1 * i) for i, m in enumerate(ORDER)]
        assert rank_models(acc, "desc", ORDER).ranks == (1, 2, 3, 4)

    def test_ties_go_to_earlier_index(self):
        r = rank_models([("A", 0.5), ("B", 0.5), ("C", 0.4)], "desc", ["A", "B", "C"])
        assert r.ranks == (1, 2, 3)
        r = rank_models([("B", 0.5), ("A", 0.5), ("C", 0.4)], "desc", ["B", "A", "C"])
        assert r.ranks == (1, 2, 3)

    def test_ascending(self):
        epochs = [("A", 30), ("B", 12), ("C", 20)]
        assert rank_models(epochs, "asc", ["A", "B", "C"]).ranks == (3, 1, 2)

    def test_missing_model_is_named(self):
        with pytest.raises(ValidationError, match="ResNet50"):
            rank_models([(m, 1.0) for m in ORDER[:3]], "desc", ORDER)

    def test_duplicate_model_is_named(self):
        with pytest.raises(ValidationError, match="VGG16"):
            rank_models([("VGG16", 1.0), ("VGG16", 2.0)], "desc", ["VGG16"])

    def test_bad_direction(self):
        with pytest.raises(ValidationError):
            rank_models([("A", 1.0)], "sideways", ["A"])

    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=12), st.sampled_from(["asc", "desc"]))
    def test_monotone_transform_invariance(self, values, direction):
        order = [f"m{i}" for i in range(len(values))]
        a = rank_models(list(zip(order, values)), direction, order)
        b = rank_models(list(zip(order, [2.0 * v for v in values])), direction, order)
        assert a.ranks == b.ranks
        assert sorted(a.ranks) == list(range(1, len(values) + 1))


class TestDistances:
    def test_leaf_vs_mnist_euclidean(self):
        assert euclidean_distance(vec([3, 4, 1, 2]), vec([1, 2, 3, 4])) == 4.0

    def test_identical(self):
        assert euclidean_distance(vec([2, 1, 3]), vec([2, 1, 3])) == 0.0
        assert kendall_tau_distance(vec([1, 2, 3, 4]), vec([1, 2, 3, 4])) == (0, 0.0)

    def test_reversal(self):
        assert euclidean_distance(vec([1, 2, 3, 4]), vec([4, 3, 2, 1])) == pytest.approx(math.sqrt(20), abs=1e-12)
        assert kendall_tau_distance(vec([1, 2, 3, 4]), vec([4, 3, 2, 1])) == (6, 1.0)

    def test_single_swap(self):
        raw, norm = kendall_tau_distance(vec([1, 2, 3, 4]), vec([2, 1, 3, 4]))
        assert (raw, norm) == brute_kendall([1, 2, 3, 4], [2, 1, 3, 4]) == (1, pytest.approx(1 / 6))

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            euclidean_distance(vec([1, 2]), vec([1, 2, 3]))

    def test_kendall_needs_two(self):
        with pytest.raises(ValidationError):
            kendall_tau_distance(vec([1]), vec([1]))

    def test_model_order_mismatch(self):
        with pytest.raises(ValidationError):
            euclidean_distance(vec([1, 2], ["a", "b"]), vec([1, 2], ["b", "a"]))

    def test_not_a_permutation(self):
        with pytest.raises(ValidationError):
            vec([1, 1, 2])

    @given(permutations, st.data())
    def test_kendall_matches_brute_force(self, a, data):
        b = data.draw(st.permutations(a))
        assert kendall_tau_distance(vec(a), vec(b)) == brute_kendall(a, b)

    @settings(max_examples=200)
    @given(permutations, st.data())
    def test_metric_properties(self, a, data):
        b = data.draw(st.permutations(a))
        c = data.draw(st.permutations(a))
        va, vb, vc = vec(a), vec(b), vec(c)
        assert euclidean_distance(va, va) == 0.0
        assert euclidean_distance(va, vb) == euclidean_distance(vb, va)
        assert euclidean_distance(va, vc) <= euclidean_distance(va, vb) + euclidean_distance(vb, vc) + 1e-12
        raw, norm = kendall_tau_distance(va, vb)
        assert 0.0 <= norm <= 1.0
        assert (norm == 0.0) == (a == b)
        assert kendall_tau_distance(va, vec([len(a) + 1 - r for r in a]))[1] == 1.0


class TestCategoryAverages:
    def test_constant(self):
        ds = ["a", "b", "c", "d"]
        dist = {(x, y): 2.5 for x, y in itertools.combinations(ds, 2)}
        table = category_averages(dist, {"a": "X", "b": "X", "c": "Y", "d": "Y"})
        assert set(table.averages.values()) == {2.5}

    def test_hand_enumeration(self):
        dist = {
            ("a1", "a2"): 1.0,
            ("b1", "b2"): 3.0,
            ("a1", "b1"): 2.0,
            ("a1", "b2"): 4.0,
            ("b1", "a2"): 6.0,  # either orientation is accepted
            ("a2", "b2"): 8.0,
            ("a1", "a1"): 99.0,  # self pair ignored
        }
        cats = {"a1": "classical", "a2": "classical", "b1": "agri", "b2": "agri"}
        table = category_averages(dist, cats)
        assert table.averages[("classical", "classical")] == 1.0
        assert table.averages[("agri", "agri")] == 3.0
        assert table.averages[("classical", "agri")] == 5.0
        assert table.averages[("agri", "classical")] == 5.0

    def test_unlabelled_dataset(self):
        with pytest.raises(ValidationError, match="b"):
            category_averages({("a", "b"): 1.0}, {"a": "X"})

    @given(st.lists(st.floats(0, 10), min_size=6, max_size=6), st.lists(st.sampled_from("XYZ"), min_size=4, max_size=4))
    def test_symmetric(self, values, labels):
        ds = ["p", "q", "r", "s"]
        dist = dict(zip(itertools.combinations(ds, 2), values))
        table = category_averages(dist, dict(zip(ds, labels)))
        for (a, b), v in table.averages.items():
            assert table.averages[(b, a)] == v


def test_metric_table_pipeline():
    rows = [
        ("cifar10", "A", "accuracy", 0.9),
        ("cifar10", "B", "accuracy", 0.8),
        ("cifar10", "C", "accuracy", 0.7),
        ("leaf", "A", "accuracy", 0.6),
        ("leaf", "B", "accuracy", 0.8),
        ("leaf", "C", "accuracy", 0.7),
        ("cifar10", "A", "epochs", 10),
        ("cifar10", "B", "epochs", 20),
        ("cifar10", "C", "epochs", 30),
        ("leaf", "A", "epochs", 30),
        ("leaf", "B", "epochs", 20),
        ("leaf", "C", "epochs", 10),
    ]
    table = MetricTable(rows, ["A", "B", "C"])
    vectors = ranking_vectors(table, {"accuracy": "desc", "epochs": "asc"})
    assert vectors[("leaf", "accuracy")].ranks == (3, 1, 2)
    assert vectors[("leaf", "epochs")].ranks == (3, 2, 1)
    dist = {(d, m): (e, r, n) for _, d, m, e, r, n in distances_from_base(vectors, "cifar10")}
    assert dist[("cifar10", "accuracy")] == (0.0, 0, 0.0)
    assert dist[("leaf", "accuracy")][0] == pytest.approx(math.sqrt(4 + 1 + 1))
    assert dist[("leaf", "epochs")][1:] == (3, 1.0)


def test_metric_table_rejects_duplicates():
    with pytest.raises(ValidationError):
        MetricTable([("d", "A", "acc", 1.0), ("d", "A", "acc", 2.0)], ["A"])
    with pytest.raises(ValidationError):
        MetricTable([("d", "Z", "acc", 1.0)], ["A"])
