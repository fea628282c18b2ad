"""Argument parsing and subcommand entry points.

Exit codes: 0 success, 2 configuration problem (bad flags, malformed JSON,
inconsistent settings), 3 numeric failure (diverged training, degenerate
linear algebra, failed closed-form checks).  The environment variable
``REP4EX_SEED`` overrides the master seed of every subcommand.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .. import __version__
from ..kernels import DegenerateSampleError
from ..models import (
    AutoencoderModel,
    TrainConfig,
    TrainingDivergedError,
    train_autoencoder,
)
from ..numcore import (
    DegenerateDesignError,
    GradientBlowupError,
    GraphError,
    RngStream,
)
from ..pipeline import DegenerateSplitError, choose_lambda
from ..prop1 import DISCREPANCY_NOTE
from ..scm import (
    ConfigError,
    make_extrap_config,
    make_unmix_config,
    sample_extrap,
    sample_unmix,
    write_dataset_csv,
)
from ..tableio import write_csv, write_sidecar
from .experiments import (
    EXPERIMENT_IDS,
    ExperimentConfig,
    ExperimentConfigError,
    run_experiment,
)

CONFIG_ERRORS = (ExperimentConfigError, ConfigError, ValueError, KeyError,
                 FileNotFoundError, json.JSONDecodeError)
NUMERIC_ERRORS = (TrainingDivergedError, GradientBlowupError,
                  DegenerateDesignError, DegenerateSampleError,
                  DegenerateSplitError, GraphError, np.linalg.LinAlgError,
                  FloatingPointError)


def _master_seed(args) -> int:
    env = os.environ.get("REP4EX_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ExperimentConfigError(
                f"REP4EX_SEED must be an integer, got {env!r}") from None
    return args.seed


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _make_scm_config(task: str, args, seed: int):
    if task == "unmix":
        return make_unmix_config(args.dim_z, args.alpha, seed,
                                 dim_x=args.dim_x or 10)
    return make_extrap_config(args.dim_z, args.gamma, seed,
                              dim_x=args.dim_x, rho=args.rho,
                              sigma_x=args.sigma_x)


def _sample(task: str, scm_config, n: int):
    if task == "unmix":
        return sample_unmix(scm_config, n)
    return sample_extrap(scm_config, n)


def cmd_gen_data(args) -> int:
    seed = _master_seed(args)
    scm_config = _make_scm_config(args.task, args, seed)
    data = _sample(args.task, scm_config, args.n)
    write_dataset_csv(data, scm_config, args.out, with_hidden=args.with_hidden)
    print(f"wrote {len(data)} rows to {args.out} (and {args.out}.json)")
    return 0


def cmd_run_experiment(args) -> int:
    doc = {}
    if args.config is not None:
        with open(args.config) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ExperimentConfigError("config file must hold a JSON object")
    overrides = {
        "experiment_id": args.experiment_id,
        "alphas": args.alphas, "gammas": args.gammas, "dims": args.dims,
        "rhos": args.rhos, "sigma_xs": args.sigma_xs,
        "lambda": args.mmr_weight, "repetitions": args.reps,
        "out_dir": args.out_dir, "n_train": args.n_train,
        "epochs": args.epochs, "workers": args.workers,
        "candidates": args.candidates, "n_mc": args.n_mc,
    }
    for key, value in overrides.items():
        if value is not None:
            doc[key] = value
    env_seed = os.environ.get("REP4EX_SEED")
    if env_seed is not None:
        try:
            doc["seed"] = int(env_seed)
        except ValueError:
            raise ExperimentConfigError(
                f"REP4EX_SEED must be an integer, got {env_seed!r}") from None
    elif args.seed is not None:
        doc["seed"] = args.seed
    if "experiment_id" not in doc:
        raise ExperimentConfigError(
            "an experiment id is required (flag --experiment-id or config file)")
    if isinstance(doc.get("lambda"), str) and doc["lambda"] != "auto":
        try:
            doc["lambda"] = float(doc["lambda"])
        except ValueError:
            raise ExperimentConfigError(
                f"lambda must be a number or 'auto', got {doc['lambda']!r}"
            ) from None
    config = ExperimentConfig.from_json_dict(doc)
    table, sidecar = run_experiment(config)
    csv_path = Path(config.out_dir) / f"{config.experiment_id}.csv"
    print(f"experiment {config.experiment_id}: {sidecar['records']} records "
          f"({sidecar['errors']} errors) -> {csv_path}")
    for unit, lam in sidecar["resolved_lambda"].items():
        print(f"  grid:rep {unit}: lambda = {lam:g}")
    return 0 if sidecar["errors"] == 0 else 3


def cmd_choose_lambda(args) -> int:
    seed = _master_seed(args)
    scm_config = make_unmix_config(args.dim_z, args.alpha, seed)
    data = sample_unmix(scm_config, args.n)
    choice = choose_lambda(args.candidates, data, args.dim_z,
                           RngStream(seed).derive("choose-lambda"),
                           TrainConfig(epochs=args.epochs), args.cutoff)
    print(f"{'lambda':>12}  {'recon':>12}  {'inflation':>12}  selected")
    print(f"{0.0:>12g}  {choice.baseline_recon:>12.6g}  {'-':>12}  ")
    for row in choice.table:
        mark = "*" if row["mmr_weight"] == choice.selected else ""
        print(f"{row['mmr_weight']:>12g}  {row['recon']:>12.6g}  "
              f"{row['inflation']:>12.6g}  {mark}")
    print(f"selected lambda: {choice.selected:g}")
    if args.out is not None:
        rows = [[row["mmr_weight"], row["recon"], row["inflation"],
                 int(row["mmr_weight"] == choice.selected)]
                for row in choice.table]
        write_csv(args.out, ["lambda", "recon", "inflation", "selected"], rows)
        write_sidecar(str(args.out) + ".json", {
            "dim_z": args.dim_z, "alpha": args.alpha, "n": args.n,
            "seed": seed, "candidates": list(args.candidates),
            "cutoff": args.cutoff, "epochs": args.epochs,
            "selected": choice.selected, "package_version": __version__,
        })
    return 0


def cmd_prop1_demo(args) -> int:
    seed = _master_seed(args)
    config = ExperimentConfig("prop1", seed=seed, out_dir=args.out_dir,
                              n_mc=args.n_mc)
    table, sidecar = run_experiment(config)
    rows = table.sorted_rows()
    print(f"{'section':>16}  {'a':>10}  {'model1':>12}  {'model2':>12}  {'gap':>12}")
    for row in rows:
        section, a, one, two, gap, _err = row
        print(f"{section:>16}  {a:>10.4f}  {one:>12.8f}  {two:>12.8f}  "
              f"{gap:>12.8f}")
    obs = [r for r in rows if r[0] == "observational"]
    inter = [r for r in rows if r[0] == "interventional"]
    mass = next(r for r in rows if r[0] == "total-mass")
    checks = [
        ("densities integrate to 1", max(abs(mass[2] - 1), abs(mass[3] - 1)) < 1e-8),
        ("observational means agree on (0, 1)", max(r[4] for r in obs) < 1e-10),
        ("interventional gap is 1/12 on (-3, -2)",
         all(abs(r[4] - 1.0 / 12.0) < 1e-10 for r in inter)),
    ]
    ok = True
    for label, passed in checks:
        print(f"{'PASS' if passed else 'FAIL'}: {label}")
        ok = ok and passed
    print(DISCREPANCY_NOTE)
    out = Path(args.out_dir) / "prop1.csv"
    print(f"wrote {out}")
    return 0 if ok and sidecar["errors"] == 0 else 3


def _train_for_dump(args, seed: int) -> AutoencoderModel:
    scm_config = _make_scm_config(args.task, args, seed)
    data = _sample(args.task, scm_config, args.n)
    tc = TrainConfig(epochs=args.epochs)
    stream = RngStream(seed).derive("dump-model")
    plain = train_autoencoder(data, args.dim_z, 0.0, stream.derive("plain"), tc)
    if args.mmr_weight > 0.0:
        return train_autoencoder(data, args.dim_z, args.mmr_weight,
                                 stream.derive("penalized"), tc, init=plain)
    return plain


def cmd_dump_model(args) -> int:
    seed = _master_seed(args)
    model = _train_for_dump(args, seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote model to {out}")
    return 0


def _read_feature_columns(path: str) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = [n for n in reader.fieldnames or [] if n.startswith("x_")]
        if not names:
            raise ExperimentConfigError(
                f"{path} has no feature columns (expected x_0, x_1, ...)")
        names.sort(key=lambda n: int(n.split("_", 1)[1]))
        rows = [[float(rec[n]) for n in names] for rec in reader]
    if not rows:
        raise ExperimentConfigError(f"{path} holds no data rows")
    return np.asarray(rows, dtype=np.float64)


def cmd_eval_model(args) -> int:
    with open(args.model) as fh:
        doc = json.load(fh)
    try:
        model = AutoencoderModel.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise ExperimentConfigError(
            f"{args.model}: malformed model document (field {exc})") from None
    x = _read_feature_columns(args.data)
    rep = model.encode(x)
    recon = model.decode(rep)
    err = np.sum((x - recon) ** 2, axis=1)
    header = [f"rep_{j}" for j in range(rep.shape[1])] + ["recon_sq_error"]
    rows = [[*map(float, rep[i]), float(err[i])] for i in range(len(x))]
    write_csv(args.out, header, rows)
    print(f"evaluated {len(x)} rows; mean squared reconstruction error "
          f"{float(np.mean(err)):.6g}; wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rep4ex",
        description="Identifiable representations and intervention "
                    "extrapolation: data generation, training, experiments.")
    parser.add_argument("--version", action="version",
                        version=f"rep4ex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="sample a dataset to CSV + sidecar")
    gen.add_argument("--task", choices=("unmix", "extrap"), required=True)
    gen.add_argument("--dim-z", type=int, required=True)
    gen.add_argument("--alpha", type=float, default=1.0,
                     help="intervention strength (unmix task)")
    gen.add_argument("--gamma", type=float, default=1.2,
                     help="action support half-width (extrap task)")
    gen.add_argument("--rho", type=float, default=None,
                     help="action-independent noise correlation (extrap)")
    gen.add_argument("--sigma-x", type=float, default=0.0,
                     help="observation noise level (extrap)")
    gen.add_argument("--dim-x", type=int, default=None)
    gen.add_argument("--n", type=int, default=1000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--with-hidden", action="store_true",
                     help="include ground-truth latent columns")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_data)

    run = sub.add_parser("run-experiment", help="run a full experiment grid")
    run.add_argument("--config", default=None,
                     help="JSON config; flat flags override its fields")
    run.add_argument("--experiment-id", choices=EXPERIMENT_IDS, default=None)
    run.add_argument("--alphas", type=_float_list, default=None)
    run.add_argument("--gammas", type=_float_list, default=None)
    run.add_argument("--dims", type=_int_list, default=None)
    run.add_argument("--rhos", type=_float_list, default=None)
    run.add_argument("--sigma-xs", type=_float_list, default=None)
    run.add_argument("--lambda", dest="mmr_weight", default=None,
                     help="penalty weight, or 'auto' for the selection heuristic")
    run.add_argument("--reps", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--n-train", type=int, default=None)
    run.add_argument("--n-mc", type=int, default=None)
    run.add_argument("--epochs", type=int, default=None)
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--candidates", type=_float_list, default=None)
    run.add_argument("--out-dir", default=None)
    run.set_defaults(func=cmd_run_experiment)

    pick = sub.add_parser("choose-lambda",
                          help="run the penalty-weight selection heuristic")
    pick.add_argument("--dim-z", type=int, default=2)
    pick.add_argument("--alpha", type=float, default=5.0)
    pick.add_argument("--n", type=int, default=1000)
    pick.add_argument("--seed", type=int, default=0)
    pick.add_argument("--candidates", type=_float_list,
                      default=(1e4, 1e3, 1e2, 1e1, 1e0))
    pick.add_argument("--cutoff", type=float, default=0.2)
    pick.add_argument("--epochs", type=int, default=1000)
    pick.add_argument("--out", default=None, help="optional CSV output path")
    pick.set_defaults(func=cmd_choose_lambda)

    demo = sub.add_parser("prop1-demo",
                          help="closed-form and simulated tables for the "
                               "observational-equivalence counterexample")
    demo.add_argument("--out-dir", default="results")
    demo.add_argument("--n-mc", type=int, default=1_000_000)
    demo.add_argument("--seed", type=int, default=0)
    demo.set_defaults(func=cmd_prop1_demo)

    dump = sub.add_parser("dump-model",
                          help="train an autoencoder and save it as JSON")
    dump.add_argument("--task", choices=("unmix", "extrap"), default="unmix")
    dump.add_argument("--dim-z", type=int, required=True)
    dump.add_argument("--alpha", type=float, default=5.0)
    dump.add_argument("--gamma", type=float, default=1.2)
    dump.add_argument("--rho", type=float, default=None)
    dump.add_argument("--sigma-x", type=float, default=0.0)
    dump.add_argument("--dim-x", type=int, default=None)
    dump.add_argument("--n", type=int, default=1000)
    dump.add_argument("--seed", type=int, default=0)
    dump.add_argument("--lambda", dest="mmr_weight", type=float, default=100.0)
    dump.add_argument("--epochs", type=int, default=1000)
    dump.add_argument("--out", required=True)
    dump.set_defaults(func=cmd_dump_model)

    ev = sub.add_parser("eval-model",
                        help="load a dumped model and evaluate it on a "
                             "gen-data CSV")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval_model)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
