"""Command-line entry point: ``profilebench <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical failure.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from . import boost, harness, rankvec, swarm, tinynet, weightstats
from ._io import read_csv, read_json, write_json
from .exceptions import NumericalError, ProfileBenchError, ValidationError
from .reaction import PopulationSpec, compute_moments, sample_population, simulate_population

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _directions(text):
    """``desc`` for every metric, or ``accuracy=desc,loss=asc,...``."""
    if "=" not in text:
        return rankvec.parse_direction(text)
    out = {}
    for part in text.split(","):
        metric, _, direction = part.partition("=")
        out[metric.strip()] = rankvec.parse_direction(direction.strip())
    return out


def cmd_rank(args):
    table = harness.read_metric_table(args.metrics)
    categories = None
    if args.categories:
        categories = {r["dataset"]: r["category"] for r in read_csv(args.categories)}
    _, rows = harness.run_rank(table, _directions(args.direction), args.base, args.out, categories)
    for base, ds, metric, euc, raw, norm in rows:
        print(f"{metric:>12} {ds:>20}  euclidean={euc:.4f}  kendall={raw} ({norm:.4f})")


def cmd_simulate(args):
    network = harness.load_network(args.network)
    spec = PopulationSpec.from_dict(read_json(args.population))
    theta = np.asarray(args.theta, dtype=float)
    states = sample_population(spec, args.seed)
    per_time = simulate_population(network, theta, states, spec.times, args.step)
    summary = compute_moments(per_time, spec.times)
    write_json(args.out, {"species": list(network.species), **summary.to_dict()})


def cmd_pso(args):
    datasets = harness.load_pso_datasets(args.networks)
    configs = harness.load_swarm_configs(args.configs)
    reports, distances = swarm.replicate_study(
        configs,
        datasets,
        args.runs,
        args.seed,
        particles=args.particles,
        epochs=args.epochs,
        step=args.step,
        n_jobs=args.jobs,
    )
    harness.write_pso_outputs(args.out, reports, distances)
    for rep in reports:
        print(f"{rep.dataset}: cost ranks {rep.cost_ranking.ranks}, spread ranks {rep.spread_ranking.ranks}")


def cmd_synth(args):
    grid = read_json(args.grid) if args.grid else {}
    configs = tinynet.config_grid(
        grid.get("optimizers", tinynet.OPTIMIZERS),
        grid.get("learning_rates", tinynet.DEFAULT_LEARNING_RATES),
        grid.get("activations", tinynet.ACTIVATIONS),
    )
    spec = tinynet.SynthDatasetSpec.from_dict(read_json(args.dataset)) if args.dataset else tinynet.SynthDatasetSpec()
    manifest, _ = harness.synthesize(
        configs, spec, args.out, args.epochs, args.patience, args.seed, args.steps_per_epoch
    )
    print(f"wrote {len(manifest.configs)} configurations to {os.path.join(args.out, 'manifest.json')}")


def cmd_extract(args):
    manifest = weightstats.RunManifest.load(args.manifest)
    rows = weightstats.build_table(manifest, args.cap)
    weightstats.write_table(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")


def _params(path):
    return boost.BoostParams.from_dict(read_json(path)) if path else boost.BoostParams()


def cmd_gbm_train(args):
    rows = weightstats.read_table(args.table)
    model = boost.fit(rows, _params(args.params), args.seed)
    model.save(args.model)


def cmd_gbm_eval(args):
    model = boost.GBMRegressor.load(args.model)
    X, y = weightstats.rows_to_arrays(weightstats.read_table(args.table))
    report = boost.evaluate(model.predict(X), y)
    write_json(args.out, asdict(report))
    print(f"accuracy {report.accuracy_percent:.2f}%  rrmse {report.rrmse:.4f}  rows {report.n_rows}")


def cmd_sweep(args):
    manifest = weightstats.RunManifest.load(args.manifest)
    plan = harness.split_by_config(manifest, args.test_fraction, args.seed)
    report = harness.run_sweep(manifest, plan, _params(args.params), args.caps, args.seed)
    os.makedirs(args.out, exist_ok=True)
    harness.write_sweep(os.path.join(args.out, "sweep_report.csv"), report)
    write_json(os.path.join(args.out, "split.json"), plan.to_dict())
    report.model.save(os.path.join(args.out, "model.json"))
    for row in report.rows:
        print(f"epoch {row.epoch:>4} ({row.training_time_percent:g}%)  accuracy {row.accuracy:.2f}%  rrmse {row.rrmse:.4f}")


def cmd_pipeline(args):
    if not args.config:
        raise ValidationError("pipeline needs --config")
    config = read_json(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    base = os.path.dirname(os.path.abspath(args.config))
    # relative paths inside the config are resolved against its directory
    cwd = os.getcwd()
    out = os.path.abspath(args.out)
    os.chdir(base)
    try:
        harness.run_pipeline(config, out)
    finally:
        os.chdir(cwd)
    print(f"pipeline outputs in {out}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=False)
    common.add_argument("--config", help="experiment config (pipeline)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="profilebench", description="Dataset-specific profiling toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("rank", parents=[common], help="ranking vectors and distances from a metrics file")
    s.add_argument("--metrics", required=True)
    s.add_argument("--base", required=True)
    s.add_argument("--direction", default="desc", help="'asc', 'desc' or metric=dir,... pairs")
    s.add_argument("--categories", help="CSV with columns dataset,category")
    s.set_defaults(func=cmd_rank, need_out=True)

    s = sub.add_parser("simulate", parents=[common], help="moments of a simulated population")
    s.add_argument("--network", required=True, help="network JSON or builtin name N1/N2")
    s.add_argument("--theta", required=True, type=_floats)
    s.add_argument("--population", required=True)
    s.add_argument("--step", type=float)
    s.set_defaults(func=cmd_simulate, need_out=True)

    s = sub.add_parser("pso", parents=[common], help="replicate PSO study over dataset bundles")
    s.add_argument("--networks", required=True, help="directory of dataset bundle JSON files")
    s.add_argument("--configs", help="JSON list of swarm configs (default: the five built-in ones)")
    s.add_argument("--runs", type=int, default=30)
    s.add_argument("--particles", type=int, default=200)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--step", type=float)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_pso, need_out=True)

    s = sub.add_parser("synth", parents=[common], help="train the tiny-net grid and write snapshots")
    s.add_argument("--grid")
    s.add_argument("--dataset")
    s.add_argument("--epochs", type=int, default=75)
    s.add_argument("--patience", type=int)
    s.add_argument("--steps-per-epoch", type=int, default=10, help="full-batch updates per epoch")
    s.set_defaults(func=cmd_synth, need_out=True)

    s = sub.add_parser("extract", parents=[common], help="feature table from a run manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--cap", type=float, default=1.0)
    s.set_defaults(func=cmd_extract, need_out=True)

    gbm = sub.add_parser("gbm", help="train or evaluate the boosted-tree predictor")
    gsub = gbm.add_subparsers(dest="gbm_command", required=True, parser_class=_Parser)
    s = gsub.add_parser("train", parents=[common])
    s.add_argument("--table", required=True)
    s.add_argument("--params")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_gbm_train, need_out=False)
    s = gsub.add_parser("eval", parents=[common])
    s.add_argument("--model", required=True)
    s.add_argument("--table", required=True)
    s.set_defaults(func=cmd_gbm_eval, need_out=True)

    s = sub.add_parser("sweep", parents=[common], help="epoch-cap sweep over a run manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--params")
    s.add_argument("--caps", type=_floats, default=list(harness.DEFAULT_CAPS))
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.set_defaults(func=cmd_sweep, need_out=True)

    s = sub.add_parser("pipeline", parents=[common], help="run an experiment config end to end")
    s.set_defaults(func=cmd_pipeline, need_out=True)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING)
    if getattr(args, "need_out", False) and not args.out:
        parser.error(f"{args.command} requires --out")
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ProfileBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
