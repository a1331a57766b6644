"""Ranking vectors over a fixed model order and distances between them.

A ranking vector stores, at each model's fixed index, the rank (1 = best)
that model attained for one metric on one dataset.  Comparing the vectors
of two datasets tells how much the datasets permute the model ordering.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from .exceptions import ValidationError

ASCENDING = "asc"
DESCENDING = "desc"
_DIRECTIONS = {"asc": ASCENDING, "ascending": ASCENDING, "desc": DESCENDING, "descending": DESCENDING}


def parse_direction(direction):
    try:
        return _DIRECTIONS[str(direction).lower()]
    except KeyError:
        raise ValidationError(f"unknown rank direction {direction!r}; use 'asc' or 'desc'") from None


@dataclass(frozen=True)
class RankingVector:
    dataset_id: str
    metric_id: str
    ranks: tuple
    model_order: tuple = ()

    def __post_init__(self):
        ranks = tuple(int(r) for r in self.ranks)
        object.__setattr__(self, "ranks", ranks)
        object.__setattr__(self, "model_order", tuple(self.model_order))
        if sorted(ranks) != list(range(1, len(ranks) + 1)):
            raise ValidationError(f"ranks {ranks} are not a permutation of 1..{len(ranks)}")
        if self.model_order and len(self.model_order) != len(ranks):
            raise ValidationError("model_order length does not match ranks")

    def __len__(self):
        return len(self.ranks)

    def as_array(self):
        return np.asarray(self.ranks, dtype=np.int64)

    def rank_of(self, model_id):
        return self.ranks[self.model_order.index(model_id)]


@dataclass
class MetricTable:
    """Rows of ``(dataset_id, model_id, metric_id, value)`` plus the model order."""

    rows: list
    model_order: list

    def __post_init__(self):
        self.rows = [(str(d), str(m), str(k), float(v)) for d, m, k, v in self.rows]
        self.model_order = [str(m) for m in self.model_order]
        if len(set(self.model_order)) != len(self.model_order):
            raise ValidationError("model_order contains duplicates")
        seen = set()
        known = set(self.model_order)
        for d, m, k, _ in self.rows:
            if (d, m, k) in seen:
                raise ValidationError(f"duplicate row for dataset={d} model={m} metric={k}")
            seen.add((d, m, k))
            if m not in known:
                raise ValidationError(f"model {m!r} is not in model_order")

    @property
    def datasets(self):
        return list(dict.fromkeys(d for d, _, _, _ in self.rows))

    @property
    def metrics(self):
        return list(dict.fromkeys(k for _, _, k, _ in self.rows))

    def values(self, dataset_id, metric_id):
        return [(m, v) for d, m, k, v in self.rows if d == dataset_id and k == metric_id]

    @classmethod
    def from_records(cls, records, model_order=None):
        """Build from dict records with keys dataset, model, metric, value.

        Without an explicit ``model_order`` the first-appearance order of
        models in ``records`` is used.
        """
        rows = [(r["dataset"], r["model"], r["metric"], r["value"]) for r in records]
        if model_order is None:
            model_order = list(dict.fromkeys(str(m) for _, m, _, _ in rows))
        return cls(rows, model_order)


@dataclass
class CategoryTable:
    categories: dict
    averages: dict = field(default_factory=dict)

    def labels(self):
        return list(dict.fromkeys(self.categories.values()))

    def matrix(self):
        labels = self.labels()
        out = np.full((len(labels), len(labels)), np.nan)
        for i, a in enumerate(labels):
            for j, b in enumerate(labels):
                if (a, b) in self.averages:
                    out[i, j] = self.averages[(a, b)]
        return labels, out


def rank_models(values, direction, model_order, dataset_id="", metric_id=""):
    """Rank ``(model_id, value)`` pairs into a vector aligned to ``model_order``.

    Rank 1 goes to the largest value when ``direction`` is descending and to
    the smallest when ascending.  Ties go to the model with the earlier index
    in ``model_order``.
    """
    direction = parse_direction(direction)
    model_order = [str(m) for m in model_order]
    if not values:
        raise ValidationError("cannot rank an empty list of values")
    lookup = {}
    for model_id, value in values:
        model_id = str(model_id)
        if model_id in lookup:
            raise ValidationError(f"model {model_id!r} appears more than once")
        if model_id not in model_order:
            raise ValidationError(f"model {model_id!r} is not in model_order")
        lookup[model_id] = float(value)
    for model_id in model_order:
        if model_id not in lookup:
            raise ValidationError(f"missing value for model {model_id!r}")

    vals = np.array([lookup[m] for m in model_order])
    if np.isnan(vals).any():
        bad = model_order[int(np.flatnonzero(np.isnan(vals))[0])]
        raise ValidationError(f"value for model {bad!r} is NaN")
    keys = -vals if direction == DESCENDING else vals
    # lexsort: last key is primary; the index breaks ties
    order = np.lexsort((np.arange(len(vals)), keys))
    ranks = np.empty(len(vals), dtype=np.int64)
    ranks[order] = np.arange(1, len(vals) + 1)
    return RankingVector(dataset_id, metric_id, tuple(ranks.tolist()), tuple(model_order))


def _check_pair(a, b):
    if len(a) != len(b):
        raise ValidationError(f"ranking vectors differ in length ({len(a)} vs {len(b)})")
    if a.model_order and b.model_order and a.model_order != b.model_order:
        raise ValidationError("ranking vectors use different model orders")


def euclidean_distance(a, b):
    _check_pair(a, b)
    diff = a.as_array() - b.as_array()
    return float(np.sqrt(np.dot(diff, diff)))


def kendall_tau_distance(a, b):
    """Return ``(discordant_pairs, discordant_pairs / C(n, 2))``."""
    _check_pair(a, b)
    n = len(a)
    if n < 2:
        raise ValidationError("Kendall tau distance needs at least two models")
    ra, rb = a.as_array(), b.as_array()
    i, j = np.triu_indices(n, k=1)
    discordant = int(np.count_nonzero(np.sign(ra[i] - ra[j]) * np.sign(rb[i] - rb[j]) < 0))
    return discordant, discordant / comb(n, 2)


def ranking_vectors(table, directions):
    """Build one RankingVector per (dataset, metric) in ``table``.

    ``directions`` maps metric id to 'asc'/'desc'; a plain string applies to
    every metric.
    """
    out = {}
    for dataset_id in table.datasets:
        for metric_id in table.metrics:
            values = table.values(dataset_id, metric_id)
            if not values:
                continue
            direction = directions if isinstance(directions, str) else directions.get(metric_id)
            if direction is None:
                raise ValidationError(f"no rank direction given for metric {metric_id!r}")
            out[(dataset_id, metric_id)] = rank_models(
                values, direction, table.model_order, dataset_id, metric_id
            )
    return out


def distances_from_base(vectors, base_dataset):
    """Distances of every dataset's vector to the base dataset's, per metric."""
    rows = []
    datasets = list(dict.fromkeys(d for d, _ in vectors))
    metrics = list(dict.fromkeys(m for _, m in vectors))
    if base_dataset not in datasets:
        raise ValidationError(f"base dataset {base_dataset!r} has no rankings")
    for metric_id in metrics:
        base = vectors.get((base_dataset, metric_id))
        if base is None:
            continue
        for dataset_id in datasets:
            other = vectors.get((dataset_id, metric_id))
            if other is None:
                continue
            raw, norm = kendall_tau_distance(base, other)
            rows.append((base_dataset, dataset_id, metric_id, euclidean_distance(base, other), raw, norm))
    return rows


def pairwise_distances(vectors, metric="euclidean"):
    """Map every unordered pair of vectors (keyed by dataset id) to a distance."""
    keys = list(vectors)
    out = {}
    for a, b in combinations(keys, 2):
        if metric == "euclidean":
            d = euclidean_distance(vectors[a], vectors[b])
        elif metric == "kendall":
            d = kendall_tau_distance(vectors[a], vectors[b])[1]
        else:
            raise ValidationError(f"unknown distance {metric!r}")
        out[(a, b)] = d
    return out


def category_averages(distances, categories):
    """Average pairwise dataset distances within and across categories.

    ``distances`` maps unordered dataset pairs to a distance; either key
    orientation is accepted.  Self pairs are ignored.
    """
    pair_values = {}
    for (a, b), d in distances.items():
        if a == b:
            continue
        key = frozenset((a, b))
        if key in pair_values and not np.isclose(pair_values[key], d):
            raise ValidationError(f"asymmetric distances given for pair ({a}, {b})")
        pair_values[key] = float(d)

    sums = defaultdict(float)
    counts = defaultdict(int)
    for key, d in pair_values.items():
        a, b = sorted(key)
        for ds in (a, b):
            if ds not in categories:
                raise ValidationError(f"dataset {ds!r} has no category label")
        ca, cb = sorted((categories[a], categories[b]))
        sums[(ca, cb)] += d
        counts[(ca, cb)] += 1

    averages = {}
    for (ca, cb), total in sums.items():
        avg = total / counts[(ca, cb)]
        averages[(ca, cb)] = avg
        averages[(cb, ca)] = avg
    return CategoryTable(dict(categories), averages)
