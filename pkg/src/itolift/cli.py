"""Command-line entry point: ``itolift {lift,simulate,bench,figure,verify}``.

Every subcommand exits 0 on success. On failure it prints a JSON document
``{"error": ..., "type": ...}`` to stdout and exits with status 1 for bad
input, 2 for numerical or optimizer failures and 3 for an invalid bench.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (emit_figure_data, load_bundle, check_bundle, model_bundle, fit_config,
                    prepare_output, render_table, run_bench, run_lift, simulate_trial, write_json)
from .config import ExperimentConfig, load_config, preset_names
from .errors import InvalidInputError, LiftError, OptimizationFailedError

log = logging.getLogger("itolift")


class BenchInvalid(Exception):
    pass


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        config.tracking.base_seed = int(args.seed)
    if getattr(args, "trials", None) is not None:
        if args.trials < 1:
            raise InvalidInputError("--trials must be at least 1")
        config.tracking.n_trials = int(args.trials)
    if getattr(args, "workers", None) is not None:
        config.tracking.workers = max(1, int(args.workers))
    if getattr(args, "no_png", False):
        config.output.formats = [f for f in config.output.formats if f != "png"]
    return config


def _resolve_model(config, args, out: Path | None):
    """Lifted model from --model, else ``model.json`` in --out, else None."""
    if args.model:
        bundle = load_bundle(args.model)
    elif out is not None and (out / "model.json").is_file():
        bundle = load_bundle(out)
    else:
        return None, None
    return check_bundle(config, bundle), bundle


def cmd_lift(config, args):
    bundle = run_lift(config, args.out, args.overwrite)
    d = bundle["lifted"]["diagnostics"]
    report = {
        "process": config.process.process,
        "M": config.lifting.M,
        "J_value": d["J_value"],
        "J_null": d["J_null"],
        "r2_lift": d["r2_lift"],
        "spectral_abscissa": d["spectral_abscissa"],
        "converged": bundle["fit"]["converged"],
        "final_gradient_norm": bundle["fit"]["final_gradient_norm"],
        "exponents": bundle["lifted"]["exponents"],
    }
    print(json.dumps(report, indent=2, sort_keys=True))


def cmd_simulate(config, args):
    out = prepare_output(args.out, args.overwrite)
    tc = config.tracking
    seeds = []
    for i in range(tc.n_trials):
        seed = tc.base_seed + i
        x0, traj, obs = simulate_trial(config, seed)
        stride = obs.stride
        y = np.full(len(traj.times), np.nan)
        y[::stride] = obs.values
        np.savetxt(out / f"trial_{i}.csv", np.column_stack([traj.times, traj.states, y]),
                   delimiter=",", header="t,x,y", comments="", fmt="%.17g")
        seeds.append({"trial_index": i, "seed": seed, "x0": float(x0)})
    write_json(out / "summary.json", {"process": config.process.process,
                                      "fingerprint": config.fingerprint(), "trials": seeds})
    print(json.dumps({"trials": len(seeds), "out": str(out)}))


def cmd_bench(config, args):
    out = Path(args.out)
    lifted, bundle = _resolve_model(config, args, None)
    if lifted is None:
        report, _ = fit_config(config)
        bundle = model_bundle(config, report)
        lifted = report.lifted
    summary = run_bench(config, lifted, out, args.overwrite, bundle=bundle)
    sys.stdout.write(render_table(summary, config.name))
    if not summary.valid:
        raise BenchInvalid(f"{len(summary.failed_trials)} of {summary.n_trials} trials failed")


def cmd_figure(config, args):
    out = Path(args.out)
    lifted, _ = _resolve_model(config, args, out)
    if lifted is None:
        raise InvalidInputError("no lifted model: pass --model or run `lift` into the output directory")
    which = ["density", "overlay", "timeseries"] if args.kind == "all" else [args.kind]
    # figures may go next to an existing model bundle
    overwrite = args.overwrite or (args.model is None)
    written = emit_figure_data(config, lifted, out, which, overwrite=overwrite)
    print(json.dumps(written, indent=2, sort_keys=True))


def cmd_verify(config, args):
    from .verify import run_suite

    results = run_suite(args.results)
    doc = {"checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in results]}
    doc["passed"] = all(ok for _, ok, _ in results)
    if args.out:
        out = prepare_output(args.out, args.overwrite)
        write_json(out / "verify.json", doc)
    for n, ok, d in results:
        print(f"{'PASS' if ok else 'FAIL'}  {n}  ({d})")
    if not doc["passed"]:
        raise BenchInvalid("invariant checks failed")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="itolift", description="Ito-consistent linear lifting of scalar SDEs")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_out=True, need_config=True):
        sp.add_argument("--config", required=need_config,
                        help=f"YAML file or preset name ({', '.join(preset_names())})")
        sp.add_argument("--out", required=need_out, help="output directory")
        sp.add_argument("--seed", type=int, help="override the base seed")
        sp.add_argument("--trials", type=int, help="override the number of trials")
        sp.add_argument("--overwrite", action="store_true", help="allow writing into a non-empty directory")
        return sp

    common(sub.add_parser("lift", help="fit a lifted model and write model.json"))
    common(sub.add_parser("simulate", help="write truth trajectories with observations"))
    sp = common(sub.add_parser("bench", help="run the five-filter comparison table"))
    sp.add_argument("--model", help="model.json (or its directory) to reuse instead of fitting")
    sp.add_argument("--workers", type=int, help="parallel trial workers")
    sp.add_argument("--no-png", action="store_true", help="skip PNG rendering")
    sp = common(sub.add_parser("figure", help="emit plot data (and PNGs)"))
    sp.add_argument("--model", help="model.json (or its directory); default: --out/model.json")
    sp.add_argument("--kind", choices=["density", "overlay", "timeseries", "all"], default="all")
    sp.add_argument("--workers", type=int, help="parallel trial workers")
    sp.add_argument("--no-png", action="store_true", help="skip PNG rendering")
    sp = common(sub.add_parser("verify", help="run the invariant suite"), need_out=False, need_config=False)
    sp.add_argument("--results", help="bench output directory to re-check")
    return p


COMMANDS = {"lift": cmd_lift, "simulate": cmd_simulate, "bench": cmd_bench,
            "figure": cmd_figure, "verify": cmd_verify}


def _fail(exc: Exception, code: int) -> int:
    doc = {"error": str(exc), "type": type(exc).__name__}
    if isinstance(exc, OptimizationFailedError):
        doc["diagnostics"] = exc.diagnostics
    print(json.dumps(doc, sort_keys=True))
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        config = load_config(args.config) if args.config else load_config("ou-smoke")
        config = _apply_overrides(config, args)
        COMMANDS[args.command](config, args)
    except (InvalidInputError, FileNotFoundError, NotADirectoryError) as exc:
        return _fail(exc, 1)
    except (OptimizationFailedError, LiftError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(exc, 2)
    except BenchInvalid as exc:
        return _fail(exc, 3)
    return 0


if __name__ == "__main__":
    sys.exit(main())
