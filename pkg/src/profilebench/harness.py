"""End-to-end experiment orchestration: synth -> extract -> split -> sweep."""
import logging
import os
import shutil
from dataclasses import asdict, dataclass, field

import numpy as np

from . import boost, rankvec, swarm, tinynet, weightstats
from ._io import read_csv, read_json, write_csv, write_json
from .exceptions import StageError, ValidationError
from .reaction import BUILTIN_NETWORKS, MomentSummary, PopulationSpec, ReactionNetwork, observe

log = logging.getLogger(__name__)

DEFAULT_CAPS = (0.05, 0.10, 0.25, 0.50, 0.75, 1.00)
FAILURE_MARKER = "FAILED"


@dataclass
class SplitPlan:
    train_config_ids: list
    test_config_ids: list
    seed: int

    def to_dict(self):
        return asdict(self)


def _round_half_up(x):
    return int(np.floor(x + 0.5 + 1e-9))


def split_by_config(manifest_or_ids, test_fraction=0.2, seed=0):
    """Shuffle configuration ids and hold out the last ``round(fraction * n)`` (at least one)."""
    ids = (
        manifest_or_ids.config_ids
        if isinstance(manifest_or_ids, weightstats.RunManifest)
        else [str(c) for c in manifest_or_ids]
    )
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction {test_fraction} outside (0, 1)")
    if len(ids) < 2:
        raise ValidationError("need at least two configurations to split")
    if len(set(ids)) != len(ids):
        raise ValidationError("configuration ids must be unique")
    n_test = min(len(ids) - 1, max(1, _round_half_up(test_fraction * len(ids))))
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return SplitPlan(shuffled[: len(ids) - n_test], shuffled[len(ids) - n_test :], seed)


@dataclass
class SweepRow:
    epoch: int
    training_time_percent: float
    accuracy: float
    rrmse: float
    n_rows: int
    accuracy_cap_epoch_only: float
    rrmse_cap_epoch_only: float
    accuracy_config_level: float
    rrmse_config_level: float


SWEEP_HEADER = tuple(SweepRow.__dataclass_fields__)


@dataclass
class SweepReport:
    rows: list
    validation: boost.EvalReport = None
    model: boost.GBMRegressor = field(default=None, repr=False)

    def table(self):
        return [astuple_row(r) for r in self.rows]


def astuple_row(row):
    return tuple(getattr(row, name) for name in SWEEP_HEADER)


def _config_level(rows, preds):
    by_config = {}
    for row, p in zip(rows, preds):
        by_config.setdefault(row.config_id, ([], row.target))[0].append(p)
    p = [float(np.mean(v)) for v, _ in by_config.values()]
    t = [target for _, target in by_config.values()]
    return boost.evaluate(p, t)


def run_sweep(manifest, split, params=None, caps=DEFAULT_CAPS, seed=0, validation_fraction=0.2):
    """Train on the train configurations and evaluate test configurations at each epoch cap.

    The model is fit on a seeded ``1 - validation_fraction`` share of the
    train-configuration rows; the held-back rows give ``report.validation``.
    """
    params = params or boost.BoostParams()
    caps = [float(c) for c in caps]
    if any(b <= a for a, b in zip(caps, caps[1:])):
        raise ValidationError("caps must be strictly increasing")
    known = set(manifest.config_ids)
    if not set(split.train_config_ids) | set(split.test_config_ids) <= known:
        raise ValidationError("split refers to configurations missing from the manifest")
    if set(split.train_config_ids) & set(split.test_config_ids):
        raise ValidationError("train and test configurations overlap")

    train_rows = weightstats.build_table(manifest.subset(split.train_config_ids), 1.0)
    perm = np.random.default_rng(seed).permutation(len(train_rows))
    n_val = _round_half_up(validation_fraction * len(train_rows)) if validation_fraction > 0 else 0
    fit_idx, val_idx = np.sort(perm[: len(perm) - n_val]), np.sort(perm[len(perm) - n_val :])
    model = boost.fit([train_rows[i] for i in fit_idx], params, seed)
    validation = None
    if len(val_idx):
        Xv, yv = weightstats.rows_to_arrays([train_rows[i] for i in val_idx])
        validation = boost.evaluate(model.predict(Xv), yv)

    test_rows = weightstats.build_table(manifest.subset(split.test_config_ids), 1.0)
    X_test, y_test = weightstats.rows_to_arrays(test_rows)
    preds = model.predict(X_test)
    epochs = np.array([r.epoch for r in test_rows])

    out = []
    for frac in caps:
        cap = weightstats.cap_epochs(frac, manifest.max_epoch)
        mask = epochs <= cap
        if not mask.any():
            raise ValidationError(f"no test rows at or below epoch {cap}")
        main = boost.evaluate(preds[mask], y_test[mask], frac)
        at = epochs == cap
        only = boost.evaluate(preds[at], y_test[at]) if at.any() else None
        capped_rows = [r for r, m in zip(test_rows, mask) if m]
        cfg = _config_level(capped_rows, preds[mask])
        out.append(
            SweepRow(
                cap,
                round(100.0 * frac, 6),
                main.accuracy_percent,
                main.rrmse,
                main.n_rows,
                only.accuracy_percent if only else float("nan"),
                only.rrmse if only else float("nan"),
                cfg.accuracy_percent,
                cfg.rrmse,
            )
        )
    return SweepReport(out, validation, model)


def write_sweep(path, report):
    write_csv(path, SWEEP_HEADER, report.table())


def read_sweep(path):
    return read_csv(path)


# -- synthetic model zoo ---------------------------------------------------


def synthesize(configs, dataset_spec, out_dir, epochs=75, patience=None, seed=0, steps_per_epoch=10):
    """Train every configuration, write per-epoch snapshots and a manifest.

    Returns ``(manifest, records)``.  Every configuration starts from the
    same initial weights (drawn from ``seed``), so configurations differ only
    in their hyperparameters.
    """
    dataset = tinynet.make_dataset(dataset_spec)
    snap_dir = os.path.join(out_dir, "snapshots")
    entries, records = [], []
    for config in configs:
        record = tinynet.train(
            config, dataset, epochs=epochs, patience=patience, seed=seed, steps_per_epoch=steps_per_epoch
        )
        snaps = []
        for snap in record.snapshots:
            rel = os.path.join("snapshots", config.config_id, f"epoch_{snap.epoch:04d}.json")
            snap.save(os.path.join(out_dir, rel))
            snaps.append((snap.epoch, rel))
        entries.append(
            weightstats.ManifestEntry(config.config_id, config.hyperparameters(), record.final_test_accuracy, snaps)
        )
        records.append(record)
        log.info("trained %s: final test accuracy %.4f", config.config_id, record.final_test_accuracy)
    order = sorted(range(len(entries)), key=lambda k: entries[k].config_id)
    manifest = weightstats.RunManifest([entries[k] for k in order], epochs, os.path.abspath(out_dir))
    manifest.save(os.path.join(out_dir, "manifest.json"))
    curves = [
        (rec.config_id, e + 1, float(loss), float(rec.val_accuracy[e]) if e < len(rec.val_accuracy) else float("nan"))
        for k in order
        for rec in [records[k]]
        for e, loss in enumerate(rec.loss_history)
    ]
    write_csv(os.path.join(out_dir, "training_curves.csv"), ("config_id", "epoch", "train_loss", "val_accuracy"), curves)
    if os.path.isdir(snap_dir):
        # drop snapshot folders left over from a different grid
        keep = {e.config_id for e in entries}
        for name in os.listdir(snap_dir):
            if name not in keep:
                shutil.rmtree(os.path.join(snap_dir, name))
    return manifest, [records[k] for k in order]


# -- particle swarm datasets -------------------------------------------------


def load_network(spec):
    if isinstance(spec, str):
        if spec in BUILTIN_NETWORKS:
            return BUILTIN_NETWORKS[spec]()
        return ReactionNetwork.from_dict(read_json(spec))
    return ReactionNetwork.from_dict(spec)


def load_pso_dataset(d, base_dir="."):
    """Dataset bundle: network, population, population_seed and either observed data or theta_true."""
    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    net_spec = d["network"]
    if isinstance(net_spec, str) and net_spec not in BUILTIN_NETWORKS:
        net_spec = resolve(net_spec)
    network = load_network(net_spec)
    pop = d["population"]
    population = PopulationSpec.from_dict(read_json(resolve(pop)) if isinstance(pop, str) else pop)
    pop_seed = int(d.get("population_seed", 0))
    if "observed" in d:
        obs = d["observed"]
        observed = MomentSummary.from_dict(read_json(resolve(obs)) if isinstance(obs, str) else obs)
    elif "theta_true" in d:
        observed = observe(network, d["theta_true"], population, pop_seed)
    else:
        raise ValidationError(f"dataset {d.get('name')!r} needs 'observed' or 'theta_true'")
    return swarm.PsoDataset(str(d.get("name", network.name)), network, observed, population, pop_seed)


def load_pso_datasets(directory):
    files = sorted(f for f in os.listdir(directory) if f.endswith(".json"))
    if not files:
        raise ValidationError(f"no dataset bundles (*.json) in {directory}")
    return [load_pso_dataset(read_json(os.path.join(directory, f)), directory) for f in files]


def load_swarm_configs(path=None):
    if path is None:
        return list(swarm.STANDARD_CONFIGS)
    data = read_json(path)
    if isinstance(data, dict):
        data = data["configs"]
    return [swarm.SwarmConfig.from_dict(c) for c in data]


def write_pso_outputs(out_dir, reports, distances):
    write_csv(
        os.path.join(out_dir, "pso_report.csv"),
        swarm.REPORT_HEADER,
        [row for rep in reports for row in rep.rows()],
    )
    write_csv(os.path.join(out_dir, "pso_distances.csv"), swarm.DISTANCE_HEADER, distances)


# -- ranking -----------------------------------------------------------------


def run_rank(table, directions, base, out_dir, categories=None):
    vectors = rankvec.ranking_vectors(table, directions)
    rank_rows = [
        (d, m, model, vec.ranks[i])
        for (d, m), vec in vectors.items()
        for i, model in enumerate(table.model_order)
    ]
    write_csv(os.path.join(out_dir, "rankings.csv"), ("dataset", "metric", "model", "rank"), rank_rows)
    dist_rows = rankvec.distances_from_base(vectors, base)
    write_csv(
        os.path.join(out_dir, "distances.csv"),
        ("base_dataset", "dataset", "metric", "euclidean", "kendall_raw", "kendall_norm"),
        dist_rows,
    )
    if categories:
        cat_rows = []
        for metric in table.metrics:
            per_metric = {d: v for (d, m), v in vectors.items() if m == metric}
            cat = rankvec.category_averages(rankvec.pairwise_distances(per_metric), categories)
            cat_rows += [(metric, a, b, v) for (a, b), v in sorted(cat.averages.items())]
        write_csv(os.path.join(out_dir, "category_distances.csv"), ("metric", "category_a", "category_b", "euclidean"), cat_rows)
    return vectors, dist_rows


def read_metric_table(path):
    records = read_csv(path)
    for rec in records:
        missing = {"dataset", "model", "metric", "value"} - set(rec)
        if missing:
            raise ValidationError(f"metrics file lacks columns {sorted(missing)}")
    return rankvec.MetricTable.from_records(records)


# -- pipeline ------------------------------------------------------------------


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_pipeline(config, out_dir):
    """Run the stages named in an experiment config dict (or JSON path) into ``out_dir``.

    Recognised sections: ``synth``, ``split``, ``sweep`` (the accuracy
    prediction chain), ``rank`` and ``pso``.  A ``FAILED`` marker naming the
    stage is written if any stage raises.
    """
    base_dir = "."
    if isinstance(config, (str, os.PathLike)):
        base_dir = os.path.dirname(os.path.abspath(config))
        config = read_json(config)
    os.makedirs(out_dir, exist_ok=True)
    marker = os.path.join(out_dir, FAILURE_MARKER)
    if os.path.exists(marker):
        os.unlink(marker)
    seed = int(config.get("seed", 0))
    try:
        _run_stages(config, out_dir, seed, base_dir)
    except StageError as exc:
        with open(marker, "w", encoding="utf-8") as fh:
            fh.write(f"{exc.stage}: {exc.cause!r}\n")
        raise
    return out_dir


def _run_stages(config, out_dir, seed, base_dir):
    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    if "synth" in config:
        sc = config["synth"]
        grid = sc.get("grid", {})
        configs = _stage(
            "synth",
            tinynet.config_grid,
            grid.get("optimizers", tinynet.OPTIMIZERS),
            grid.get("learning_rates", tinynet.DEFAULT_LEARNING_RATES),
            grid.get("activations", tinynet.ACTIVATIONS),
        )
        spec = tinynet.SynthDatasetSpec.from_dict(sc.get("dataset", {}))
        manifest, _ = _stage(
            "synth",
            synthesize,
            configs,
            spec,
            out_dir,
            sc.get("epochs", 75),
            sc.get("patience"),
            sc.get("seed", seed),
            sc.get("steps_per_epoch", 10),
        )

        rows = _stage("extract", weightstats.build_table, manifest, float(config.get("extract", {}).get("cap", 1.0)))
        _stage("extract", weightstats.write_table, os.path.join(out_dir, "features.csv"), rows)

        split_cfg = config.get("split", {})
        plan = _stage(
            "split", split_by_config, manifest, split_cfg.get("test_fraction", 0.2), split_cfg.get("seed", seed)
        )
        write_json(os.path.join(out_dir, "split.json"), plan.to_dict())

        sw = config.get("sweep", {})
        params = boost.BoostParams.from_dict(sw.get("params", {}))
        report = _stage(
            "sweep", run_sweep, manifest, plan, params, sw.get("caps", DEFAULT_CAPS), sw.get("seed", seed)
        )
        report.model.save(os.path.join(out_dir, "model.json"))
        write_sweep(os.path.join(out_dir, "sweep_report.csv"), report)
        if report.validation is not None:
            write_json(os.path.join(out_dir, "validation.json"), asdict(report.validation))

    if "rank" in config:
        rc = config["rank"]
        table = _stage("rank", read_metric_table, resolve(rc["metrics"]))
        categories = None
        if rc.get("categories"):
            categories = {r["dataset"]: r["category"] for r in read_csv(resolve(rc["categories"]))}
        _stage("rank", run_rank, table, rc.get("directions", "desc"), rc["base"], out_dir, categories)

    if "pso" in config:
        pc = config["pso"]
        datasets = _stage(
            "pso", lambda: [load_pso_dataset(d, base_dir) for d in pc["datasets"]]
        )
        configs = (
            [swarm.SwarmConfig.from_dict(c) for c in pc["configs"]] if "configs" in pc else list(swarm.STANDARD_CONFIGS)
        )
        reports, distances = _stage(
            "pso",
            swarm.replicate_study,
            configs,
            datasets,
            pc.get("runs", 30),
            pc.get("seed", seed),
            particles=pc.get("particles", 200),
            epochs=pc.get("epochs", 20),
            step=pc.get("step"),
        )
        write_pso_outputs(out_dir, reports, distances)
