"""Small full-batch MLP trainer used to generate weight trajectories.

The network is ``d -> 32 -> 16 -> n_classes`` with ReLU hidden units.  An
epoch is a fixed number of full-batch gradient steps, after which the
weights are snapshotted.
"""
import itertools
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import NumericalError, ValidationError
from .weightstats import Layer, WeightSnapshot

OPTIMIZERS = ("sgd", "momentum", "adam")
ACTIVATIONS = ("softmax", "sigmoid", "linear")
DEFAULT_LEARNING_RATES = (0.1, 0.03, 0.01, 0.003)
HIDDEN = (32, 16)
MOMENTUM = 0.9
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8
# probability clip applied to softmax outputs before the log
PROB_EPS = 1e-7


@dataclass(frozen=True)
class HyperConfig:
    config_id: str
    optimizer: str
    learning_rate: float
    final_activation: str

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.final_activation not in ACTIVATIONS:
            raise ValidationError(f"unknown final activation {self.final_activation!r}")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")

    def hyperparameters(self):
        return {
            "optimizer": self.optimizer,
            "learning_rate": repr(float(self.learning_rate)),
            "final_activation": self.final_activation,
        }


def config_grid(optimizers=OPTIMIZERS, learning_rates=DEFAULT_LEARNING_RATES, activations=ACTIVATIONS):
    """Cartesian product of the three axes, optimizer-major."""
    optimizers, learning_rates, activations = list(optimizers), list(learning_rates), list(activations)
    if not optimizers or not learning_rates or not activations:
        raise ValidationError("every grid axis needs at least one value")
    return [
        HyperConfig(f"{opt}_{lr:g}_{act}", opt, float(lr), act)
        for opt, lr, act in itertools.product(optimizers, learning_rates, activations)
    ]


@dataclass(frozen=True)
class SynthDatasetSpec:
    n_samples: int = 3000
    n_features: int = 8
    n_classes: int = 4
    cluster_spread: float = 1.5
    split: tuple = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        if self.n_classes < 2:
            raise ValidationError("need at least two classes")
        if len(self.split) != 3 or min(self.split) <= 0 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValidationError("split must be three positive fractions summing to 1")
        if self.cluster_spread < 0 or self.n_features < 1 or self.n_samples < self.n_classes:
            raise ValidationError("invalid dataset size or spread")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        return {
            "n_samples": self.n_samples,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "cluster_spread": self.cluster_spread,
            "split": list(self.split),
            "seed": self.seed,
        }


@dataclass
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    centers: np.ndarray
    n_classes: int


def make_dataset(spec: SynthDatasetSpec) -> Dataset:
    """Gaussian blobs around seeded class centres with a stratified split.

    Split sizes are ``round(fraction * n_samples)`` overall; each class is
    represented in every split in proportion to its size, within one sample.
    """
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(0.0, 2.0, size=(spec.n_classes, spec.n_features))
    base, extra = divmod(spec.n_samples, spec.n_classes)
    counts = [base + (c < extra) for c in range(spec.n_classes)]
    y = np.repeat(np.arange(spec.n_classes), counts)
    X = centers[y] + spec.cluster_spread * rng.standard_normal((spec.n_samples, spec.n_features))
    # interleave classes by relative position so any prefix is stratified
    position = np.concatenate([(np.arange(n) + 0.5) / n for n in counts])
    order = np.lexsort((y, position))
    n_train = int(np.floor(spec.split[0] * spec.n_samples + 0.5))
    n_val = int(np.floor(spec.split[1] * spec.n_samples + 0.5))
    cuts = {"train": order[:n_train], "val": order[n_train : n_train + n_val], "test": order[n_train + n_val :]}
    out = {}
    for name, idx in cuts.items():
        idx = idx[rng.permutation(len(idx))]
        out[name] = (X[idx], y[idx])
    return Dataset(*out["train"], *out["val"], *out["test"], centers, spec.n_classes)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def init_params(n_in, n_classes, rng):
    sizes = (n_in, *HIDDEN, n_classes)
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def forward(params, X):
    """Return the output pre-activation and the cached layer inputs."""
    acts = [X]
    pre = []
    h = X
    n_layers = len(params) // 2
    for i in range(n_layers):
        z = h @ params[2 * i] + params[2 * i + 1]
        pre.append(z)
        h = np.maximum(z, 0.0) if i < n_layers - 1 else z
        acts.append(h)
    return pre[-1], acts, pre


def output_probs(logits, final_activation):
    if final_activation == "sigmoid":
        return _sigmoid(logits)
    return _softmax(logits)


def loss_and_output_grad(logits, y, final_activation):
    """Mean sparse cross-entropy and its gradient w.r.t. the output pre-activation."""
    n = len(y)
    rows = np.arange(n)
    onehot = np.zeros_like(logits)
    onehot[rows, y] = 1.0
    if final_activation == "linear":
        z = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        loss = float(np.mean(logsum - z[rows, y]))
        grad = (_softmax(logits) - onehot) / n
    elif final_activation == "softmax":
        p = _softmax(logits)
        py = p[rows, y]
        clipped = np.clip(py, PROB_EPS, 1.0 - PROB_EPS)
        loss = float(np.mean(-np.log(clipped)))
        live = (py > PROB_EPS) & (py < 1.0 - PROB_EPS)
        grad = (p - onehot) * live[:, None] / n
    else:
        # log-space: sigmoid outputs underflow for large negative logits
        log_s = -np.logaddexp(0.0, -logits)
        m = log_s.max(axis=1, keepdims=True)
        log_total = (m + np.log(np.exp(log_s - m).sum(axis=1, keepdims=True)))[:, 0]
        loss = float(np.mean(log_total - log_s[rows, y]))
        s = _sigmoid(logits)
        grad = (np.exp(log_s - log_total[:, None]) * (1.0 - s) - onehot * (1.0 - s)) / n
    return loss, grad


def loss_and_grads(params, X, y, final_activation):
    logits, acts, pre = forward(params, X)
    loss, delta = loss_and_output_grad(logits, y, final_activation)
    grads = [None] * len(params)
    for i in reversed(range(len(params) // 2)):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[2 * i].T) * (pre[i - 1] > 0)
    return loss, grads


class _Optimizer:
    def __init__(self, kind, lr, params):
        self.kind, self.lr, self.t = kind, lr, 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        for i, (p, g) in enumerate(zip(params, grads)):
            if self.kind == "sgd":
                p -= self.lr * g
            elif self.kind == "momentum":
                self.m[i] = MOMENTUM * self.m[i] - self.lr * g
                p += self.m[i]
            else:
                self.m[i] = ADAM_BETA1 * self.m[i] + (1 - ADAM_BETA1) * g
                self.v[i] = ADAM_BETA2 * self.v[i] + (1 - ADAM_BETA2) * g * g
                m_hat = self.m[i] / (1 - ADAM_BETA1**self.t)
                v_hat = self.v[i] / (1 - ADAM_BETA2**self.t)
                p -= self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


class TinyMLPClassifier(ClassifierMixin, BaseEstimator):
    """Full-batch MLP classifier that records a WeightSnapshot every epoch.

    An epoch is ``steps_per_epoch`` full-batch updates; the snapshot is taken
    after the last of them.  With ``patience`` set, training stops once
    validation accuracy has not improved for that many epochs (validation data
    must be passed to fit).
    """

    def __init__(
        self,
        optimizer="sgd",
        learning_rate=0.01,
        final_activation="softmax",
        epochs=75,
        patience=None,
        steps_per_epoch=10,
        config_id="",
        random_state=0,
    ):
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.final_activation = final_activation
        self.epochs = epochs
        self.patience = patience
        self.steps_per_epoch = steps_per_epoch
        self.config_id = config_id
        self.random_state = random_state

    def _snapshot(self, epoch):
        layers = [
            Layer(f"dense_{i}", self.params_[2 * i].copy(), self.params_[2 * i + 1].copy())
            for i in range(len(self.params_) // 2)
        ]
        return WeightSnapshot(self.config_id, epoch, layers)

    def fit(self, X, y, X_val=None, y_val=None):
        HyperConfig(self.config_id or "_", self.optimizer, self.learning_rate, self.final_activation)
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if self.steps_per_epoch < 1:
            raise ValidationError("steps_per_epoch must be at least 1")
        if self.patience is not None and X_val is None:
            raise ValidationError("early stopping needs validation data")
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        rng = np.random.default_rng(self.random_state)
        self.params_ = init_params(X.shape[1], len(self.classes_), rng)
        self.n_features_in_ = X.shape[1]
        opt = _Optimizer(self.optimizer, self.learning_rate, self.params_)
        self.snapshots_, self.loss_history_, self.val_accuracy_ = [], [], []
        best, since_best = -np.inf, 0
        for epoch in range(1, self.epochs + 1):
            for step in range(self.steps_per_epoch):
                loss, grads = loss_and_grads(self.params_, X, y_idx, self.final_activation)
                if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                    raise NumericalError(f"non-finite loss in config {self.config_id!r} at epoch {epoch}")
                if step == 0:
                    self.loss_history_.append(loss)
                opt.step(self.params_, grads)
            self.snapshots_.append(self._snapshot(epoch))
            if X_val is not None:
                acc = self.score(X_val, y_val)
                self.val_accuracy_.append(acc)
                if self.patience is not None:
                    if acc > best:
                        best, since_best = acc, 0
                    else:
                        since_best += 1
                        if since_best >= self.patience:
                            break
        self.epochs_run_ = len(self.snapshots_)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        logits, _, _ = forward(self.params_, X)
        return output_probs(logits, self.final_activation)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def loss(self, X, y):
        check_is_fitted(self, "params_")
        logits, _, _ = forward(self.params_, check_array(X, dtype=np.float64))
        return loss_and_output_grad(logits, np.searchsorted(self.classes_, y), self.final_activation)[0]


@dataclass
class TrainRecord:
    config_id: str
    snapshots: list
    final_test_accuracy: float
    epochs_run: int
    loss_history: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)


def train(
    config: HyperConfig, dataset: Dataset, epochs=75, patience=None, seed=0, steps_per_epoch=10
) -> TrainRecord:
    clf = TinyMLPClassifier(
        optimizer=config.optimizer,
        learning_rate=config.learning_rate,
        final_activation=config.final_activation,
        epochs=epochs,
        patience=patience,
        steps_per_epoch=steps_per_epoch,
        config_id=config.config_id,
        random_state=seed,
    )
    clf.fit(dataset.X_train, dataset.y_train, dataset.X_val, dataset.y_val)
    acc = float(clf.score(dataset.X_test, dataset.y_test))
    return TrainRecord(
        config.config_id, clf.snapshots_, acc, clf.epochs_run_, list(clf.loss_history_), list(clf.val_accuracy_)
    )
