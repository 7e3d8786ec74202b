"""
Command-line entry point.

Subcommands::

    spatialci fit-variogram OBS.csv --model-out M.json --empirical-out E.csv
    spatialci weights OBS.csv MODEL.json --out W.csv --diagnostics D.json
    spatialci calibrate OBS.csv MODEL_SPEC.json [--config CFG.json] --out R.json
    spatialci simulate SCENARIO --out-dir DIR
    spatialci experiment SCENARIO --summary S.json --replicates R.csv

Errors are written to stderr as one JSON object and the exit status is
nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .calibration import CalibrationConfig, calibrate_iterative, model_from_spec
from .ci_weights import compute_weights
from .experiments import load_scenario, run_scenario, scenario_sites, simulate_replicate
from .gp_sim import SimulationBatch
from .spatial_core import load_observations, write_observations
from .variogram import VariogramModel, fit_residuals, write_empirical_csv


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail("usage", message, status=2)


def _fail(kind, message, status=1):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message)}) + "\n")
    raise SystemExit(status)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed JSON: {exc}") from exc


def cmd_fit_variogram(args):
    obs = load_observations(args.obs)
    model, emp = fit_residuals(obs, args.family, args.smoothness, args.n_bins, args.max_dist)
    model.save(args.model_out)
    if args.empirical_out:
        write_empirical_csv(emp, args.empirical_out)
    print(json.dumps(model.to_dict()))


def cmd_weights(args):
    obs = load_observations(args.obs)
    model = VariogramModel.from_dict(_read_json(args.model))
    wv = compute_weights(obs, model)
    write_observations(obs, args.out, weights=wv.w)
    if args.diagnostics:
        wv.save_diagnostics(args.diagnostics)


def cmd_calibrate(args):
    obs = load_observations(args.obs)
    model = model_from_spec(_read_json(args.model))
    cfg = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg = CalibrationConfig.from_dict(cfg)
    res = calibrate_iterative(model, obs, cfg)
    res.save(args.out)
    print(json.dumps({"theta": dict(zip(res.param_names, map(float, res.theta))),
                      "rounds": res.rounds, "converged": res.converged}))


def _scenario(args):
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if getattr(args, "replicates", None):
        sc = replace(sc, replicates=args.replicates)
    return sc


def cmd_simulate(args):
    sc = _scenario(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for r in range(sc.replicates):
        obs = simulate_replicate(sc, r, scenario_sites(sc, r))
        name = f"replicate_{r:04d}.csv"
        write_observations(obs, out / name)
        files.append(name)
    batch = SimulationBatch(sc.replicates, sc.truth, sc.mean, sc.seed)
    manifest = batch.manifest(files)
    manifest["scenario"] = sc.to_dict()
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def cmd_experiment(args):
    sc = _scenario(args)
    progress = None
    if args.verbose:
        progress = lambda r: sys.stderr.write(f"replicate {r + 1}/{sc.replicates}\n")
    stats = run_scenario(sc, args.replicates_out, progress)
    stats.save(args.summary)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spatialci", description="CI-weighted calibration tools")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=None, help="random seed")
        sp.add_argument("-v", "--verbose", action="store_true")
        sp.set_defaults(func=func)
        return sp

    sp = add("fit-variogram", cmd_fit_variogram, "fit a variogram to observation residuals")
    sp.add_argument("obs")
    sp.add_argument("--model-out", required=True)
    sp.add_argument("--empirical-out")
    sp.add_argument("--family", default="matern", choices=["matern", "exponential"])
    sp.add_argument("--smoothness", type=float, default=1.0)
    sp.add_argument("--n-bins", type=int, default=15)
    sp.add_argument("--max-dist", type=float)

    sp = add("weights", cmd_weights, "CI weights for observations under a variogram model")
    sp.add_argument("obs")
    sp.add_argument("model")
    sp.add_argument("--out", required=True)
    sp.add_argument("--diagnostics")

    sp = add("calibrate", cmd_calibrate, "iteratively reweighted calibration")
    sp.add_argument("obs")
    sp.add_argument("model", help="forward-model spec JSON")
    sp.add_argument("--config", help="calibration config JSON")
    sp.add_argument("--out", required=True)

    sp = add("simulate", cmd_simulate, "write the simulated datasets of a scenario")
    sp.add_argument("scenario", help="scenario JSON path or bundled scenario name")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--replicates", type=int)

    sp = add("experiment", cmd_experiment, "run a scenario and summarise the estimates")
    sp.add_argument("scenario", help="scenario JSON path or bundled scenario name")
    sp.add_argument("--summary", required=True)
    sp.add_argument("--replicates-out")
    sp.add_argument("--replicates", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FileNotFoundError as exc:
        _fail("not_found", exc)
    except (ValueError, KeyError, TypeError) as exc:
        _fail("invalid_input", exc)
    except Exception as exc:  # noqa: BLE001 - reported as JSON, not a traceback
        _fail(type(exc).__name__, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
