"""Per-layer weight statistics as features for final-accuracy prediction.

Each layer contributes seven statistics of its kernel and seven of its bias
(mean, variance, and the 0/25/50/75/100th percentiles), so a network with L
layers maps to a vector of 14*L numbers.
"""
import math
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._io import read_csv, read_json, write_csv, write_json
from .exceptions import ValidationError

STAT_NAMES = ("mean", "var", "q0", "q25", "q50", "q75", "q100")
_QUANTILES = (0.0, 25.0, 50.0, 75.0, 100.0)


def layer_stats(values):
    """Mean, population variance and linearly interpolated quartiles."""
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise ValidationError("cannot summarise an empty weight array")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("weight array contains non-finite values")
    out = np.empty(7)
    out[0] = arr.mean()
    out[1] = arr.var()
    out[2:] = np.percentile(arr, _QUANTILES, method="linear")
    return out


@dataclass
class Layer:
    name: str
    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float).ravel()
        if self.kernel.size == 0 or self.bias.size == 0:
            raise ValidationError(f"layer {self.name!r} has an empty kernel or bias")


@dataclass
class WeightSnapshot:
    config_id: str
    epoch: int
    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("snapshot has no layers")
        if int(self.epoch) < 0:
            raise ValidationError("epoch must be nonnegative")
        self.epoch = int(self.epoch)

    def to_dict(self):
        return {
            "config_id": self.config_id,
            "epoch": self.epoch,
            "layers": [
                {
                    "name": layer.name,
                    "kernel_shape": list(layer.kernel.shape),
                    "kernel": layer.kernel.ravel().tolist(),
                    "bias": layer.bias.tolist(),
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d):
        layers = []
        for i, entry in enumerate(d["layers"]):
            flat = np.asarray(entry["kernel"], dtype=float)
            shape = tuple(entry.get("kernel_shape", flat.shape))
            if math.prod(shape) != flat.size:
                raise ValidationError(f"layer {i}: kernel_shape {shape} does not match {flat.size} values")
            layers.append(Layer(entry.get("name", f"layer{i}"), flat.reshape(shape), entry["bias"]))
        return cls(str(d["config_id"]), int(d["epoch"]), layers)

    def save(self, path):
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path))


def snapshot_features(snapshot):
    """Kernel stats then bias stats for every layer, in layer order."""
    parts = []
    for layer in snapshot.layers:
        parts.append(layer_stats(layer.kernel))
        parts.append(layer_stats(layer.bias))
    return np.concatenate(parts)


def feature_names(n_layers):
    return [f"f{i}" for i in range(14 * n_layers)]


def describe_feature(index):
    """Human-readable meaning of feature ``index``, e.g. ``layer1.bias.q50``."""
    layer, rest = divmod(index, 14)
    part, stat = divmod(rest, 7)
    return f"layer{layer}.{('kernel', 'bias')[part]}.{STAT_NAMES[stat]}"


class WeightStatsTransformer(TransformerMixin, BaseEstimator):
    """Stateless transformer from a sequence of WeightSnapshots to a feature matrix."""

    def fit(self, X, y=None):
        X = list(X)
        if X:
            self.n_layers_ = len(X[0].layers)
        return self

    def transform(self, X):
        rows = [snapshot_features(s) for s in X]
        if not rows:
            return np.empty((0, 0))
        if len({len(r) for r in rows}) != 1:
            raise ValidationError("snapshots have differing layer counts")
        return np.vstack(rows)

    def get_feature_names_out(self, input_features=None):
        return np.asarray(feature_names(getattr(self, "n_layers_", 0)), dtype=object)


@dataclass
class FeatureRow:
    config_id: str
    epoch: int
    features: np.ndarray
    target: float

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if not np.all(np.isfinite(self.features)):
            raise ValidationError(f"non-finite feature in config {self.config_id} epoch {self.epoch}")


@dataclass
class ManifestEntry:
    config_id: str
    hyperparameters: dict
    final_test_accuracy: float
    snapshots: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= float(self.final_test_accuracy) <= 1.0:
            raise ValidationError(f"config {self.config_id}: final_test_accuracy outside [0, 1]")
        self.snapshots = sorted((int(e), str(p)) for e, p in self.snapshots)
        epochs = [e for e, _ in self.snapshots]
        if len(set(epochs)) != len(epochs):
            raise ValidationError(f"config {self.config_id}: duplicate snapshot epochs")


@dataclass
class RunManifest:
    configs: list
    max_epoch: int
    base_dir: str = "."

    def to_dict(self):
        return {
            "max_epoch": self.max_epoch,
            "configs": [
                {
                    "config_id": c.config_id,
                    "hyperparameters": c.hyperparameters,
                    "final_test_accuracy": c.final_test_accuracy,
                    "snapshots": [{"epoch": e, "path": p} for e, p in c.snapshots],
                }
                for c in self.configs
            ],
        }

    @classmethod
    def from_dict(cls, d, base_dir="."):
        configs = [
            ManifestEntry(
                str(c["config_id"]),
                {str(k): str(v) for k, v in c.get("hyperparameters", {}).items()},
                float(c["final_test_accuracy"]),
                [(s["epoch"], s["path"]) for s in c.get("snapshots", [])],
            )
            for c in d["configs"]
        ]
        return cls(configs, int(d["max_epoch"]), base_dir)

    def save(self, path):
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path):
        return cls.from_dict(read_json(path), os.path.dirname(os.path.abspath(path)))

    @property
    def config_ids(self):
        return [c.config_id for c in self.configs]

    def subset(self, config_ids):
        wanted = set(config_ids)
        return RunManifest([c for c in self.configs if c.config_id in wanted], self.max_epoch, self.base_dir)

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)


def cap_epochs(fraction, max_epoch):
    """Number of admitted epochs: round-half-up of ``fraction * max_epoch``, at least 1."""
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"epoch cap fraction {fraction} outside (0, 1]")
    return max(1, math.floor(fraction * max_epoch + 0.5 + 1e-9))


def build_table(manifest, epoch_cap_fraction=1.0):
    """One FeatureRow per snapshot with epoch within the cap, in manifest order."""
    cap = cap_epochs(epoch_cap_fraction, manifest.max_epoch)
    rows = []
    for entry in manifest.configs:
        for epoch, path in entry.snapshots:
            if epoch > cap:
                break
            full = manifest.resolve(path)
            try:
                snap = WeightSnapshot.load(full)
            except (OSError, ValueError, KeyError) as exc:
                raise ValidationError(
                    f"cannot read snapshot for config {entry.config_id} epoch {epoch} ({full}): {exc}"
                ) from exc
            try:
                feats = snapshot_features(snap)
            except ValidationError as exc:
                raise ValidationError(f"config {entry.config_id} epoch {epoch}: {exc}") from exc
            rows.append(FeatureRow(entry.config_id, epoch, feats, entry.final_test_accuracy))
    return rows


def rows_to_arrays(rows):
    if not rows:
        raise ValidationError("feature table is empty")
    lengths = {len(r.features) for r in rows}
    if len(lengths) != 1:
        raise ValidationError("feature rows differ in length")
    X = np.vstack([r.features for r in rows])
    y = np.array([r.target for r in rows], dtype=float)
    return X, y


def write_table(path, rows):
    n = len(rows[0].features) if rows else 0
    header = ["config_id", "epoch", *[f"f{i}" for i in range(n)], "target"]
    write_csv(path, header, ([r.config_id, r.epoch, *map(float, r.features), float(r.target)] for r in rows))


def read_table(path):
    records = read_csv(path)
    rows = []
    for rec in records:
        n = sum(1 for k in rec if k.startswith("f") and k[1:].isdigit())
        try:
            feats = [float(rec[f"f{i}"]) for i in range(n)]
            rows.append(FeatureRow(rec["config_id"], int(rec["epoch"]), feats, float(rec["target"])))
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"malformed feature table {path}: {exc}") from exc
    return rows
