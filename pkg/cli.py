#!/usr/bin/env python3
"""
Command-line surface of the OU lab: check | simulate | girsanov | rigidity | reproduce

    python cli.py check --config configs/m1.toml
    python cli.py girsanov --config configs/m1.toml --replicas 10000 --self-check
    python cli.py reproduce --example all
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from cameron_martin import (
    EXAMPLES,
    Direction,
    cm_report,
    cm_report_for_law,
    equivalence_verdict,
    factorisation_check,
    has_profile,
    novikov_monte_carlo,
    reproduce_example,
)
from config import ExperimentConfig, load_config, resolve_log_level, resolve_workers
from errors import EXIT_OK, EXIT_PRECONDITION, AcceptanceError, LabError, PreconditionError
from girsanov import density_report, direct_terminals, estimate_density_weights
from reporting import report_envelope, write_frame_atomic, write_json_atomic
from rigidity import rigidity_experiment
from simulate import ReplicaStreams, moment_table, sample_path, theoretical_moments
from spectral_core import (
    Generator,
    fractional_bound,
    hs_bound_from_fractional,
    hs_perturbation_integral,
    hs_quadrature,
    resolvent_criterion,
    sector_grid,
    smoothing_constant,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
SMOOTHING_POINTS = 1000
HS_ORACLE_RTOL = 1e-8
Z_LIMIT = 3.0


def _formats(value: str) -> List[str]:
    formats = [part.strip() for part in value.split(",") if part.strip()]
    bad = set(formats) - {"json", "csv"}
    if not formats or bad:
        raise argparse.ArgumentTypeError(f"formats must be drawn from json,csv (got {value!r})")
    return formats


def _seed(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides output.directory)")
    common.add_argument("--seed", type=_seed, help="master seed (overrides run.master_seed)")
    common.add_argument("--replicas", type=int, help="replica count (overrides run.replicas)")
    common.add_argument("--format", type=_formats, dest="formats", help="comma-separated subset of json,csv")
    common.add_argument("--self-check", action="store_true", help="exit 4 when an acceptance check fails")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="ou-levy-lab", description="Lévy-driven OU law-equivalence lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("check", "deterministic criteria bundle"),
                       ("simulate", "sample paths and moment statistics"),
                       ("girsanov", "reweighting experiment"),
                       ("rigidity", "pure-jump rigidity experiment")):
        cmd = sub.add_parser(name, parents=[common], help=text)
        cmd.add_argument("--config", required=True, help="TOML or JSON experiment file")
    reproduce = sub.add_parser("reproduce", parents=[common], help="counterexample verdicts")
    reproduce.add_argument("--example", default="all", choices=sorted(EXAMPLES) + ["all"])
    reproduce.add_argument("--config", help="optional config; only output settings are used")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    return config.with_overrides(seed=args.seed, replicas=args.replicas, out=args.out, formats=args.formats)


def _out_dir(config: Optional[ExperimentConfig], args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(config.output.directory if config is not None else "out")


def _formats_of(config: Optional[ExperimentConfig], args) -> List[str]:
    if args.formats:
        return args.formats
    return config.output.formats if config is not None else ["json"]


def _emit(command: str, config: Optional[ExperimentConfig], args, result: Any) -> Path:
    return write_json_atomic(_out_dir(config, args) / f"{command}.json", report_envelope(command, config, result))


def _accept(failures: List[str], args) -> None:
    if not failures:
        return
    for failure in failures:
        print(f"❌ {failure}")
    if args.self_check:
        raise AcceptanceError("; ".join(failures))


def cmd_check(config: ExperimentConfig, args) -> Dict[str, Any]:
    model = config.build_model()
    levy = config.build_levy()
    run, T = config.run, config.grid.T

    hs = hs_perturbation_integral(model, T)
    bundle: Dict[str, Any] = {"hs": hs.to_dict()}
    failures: List[str] = []
    if hs.converged and not model.symbolic:
        quad = hs_quadrature(model, T)
        rel = abs(quad - hs.value) / abs(quad) if quad else abs(hs.value)
        bundle["hs_quadrature"] = {"value": quad, "relative_error": rel}
        if rel >= HS_ORACLE_RTOL:
            failures.append(f"HS closed form and quadrature differ (rel. err. {rel:.2e})")

    frac = fractional_bound(model, run.beta)
    bundle["fractional_bound"] = frac.to_dict()
    if run.beta < 0.5:
        bundle["hs_bound_from_fractional"] = hs_bound_from_fractional(model, run.beta, T)
    lambdas = sector_grid(run.theta, run.rays, run.lambda_min, run.lambda_max, run.lambda_points)
    bundle["resolvent"] = {"value": resolvent_criterion(model, run.beta, run.theta, lambdas),
                           "grid_points": int(lambdas.size), "sampled": True}
    smoothing = smoothing_constant(model, run.beta, np.linspace(1.0 / SMOOTHING_POINTS, 1.0, SMOOTHING_POINTS))
    smoothing_bound = (run.beta / np.e) ** run.beta
    bundle["smoothing"] = {"value": smoothing, "bound": smoothing_bound}
    if smoothing > smoothing_bound + 1e-12:
        failures.append(f"smoothing constant {smoothing:.6g} exceeds (beta/e)^beta = {smoothing_bound:.6g}")

    reports = {}
    for direction in Direction:
        if has_profile(model):
            reports[direction] = cm_report(model, direction, None, None, T, levy.rate_lambda, levy.jump_law)
        else:
            reports[direction] = cm_report_for_law(model, direction, levy, T)
        bundle[f"cm[{direction.value}]"] = reports[direction].to_dict()
    bundle["equivalence"] = equivalence_verdict(reports[Direction.A_TO_A_TILDE], reports[Direction.A_TILDE_TO_A], hs,
                                                levy)
    bundle["factorisation"] = factorisation_check(model, T).to_dict()

    novikov = reports[Direction.A_TO_A_TILDE].novikov
    if novikov is not None and novikov.satisfied and run.novikov_draws > 1:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(run.master_seed)))
        mean, se = novikov_monte_carlo(model, levy.rate_lambda, levy.jump_law, T, run.novikov_draws, rng)
        z = (mean - novikov.bound_value) / se if se > 0 else 0.0
        bundle["novikov_monte_carlo"] = {"mean": mean, "se": se, "z": z}
        if abs(z) >= Z_LIMIT:
            failures.append(f"Novikov bound and Monte Carlo disagree (z = {z:.2f})")

    path = _emit("check", config, args, bundle)
    rows = [
        ("HS integral", hs.value),
        ("||K A^-beta||", frac.value),
        ("resolvent sup (sampled)", bundle["resolvent"]["value"]),
        ("smoothing constant", smoothing),
    ] + [(f"CM {d.value}", reports[d].l2_norm_sq.value) for d in Direction] + [
        ("factorisation diagnostic", bundle["factorisation"]["value"]),
    ]
    print("🔍 Criteria")
    print(pd.DataFrame(rows, columns=["criterion", "value"]).to_string(index=False))
    print(f"⚖️  Equivalence verdict: {bundle['equivalence']}")
    print(f"📁 Report: {path}")
    _accept(failures, args)
    return bundle


def cmd_simulate(config: ExperimentConfig, args) -> Dict[str, Any]:
    model = config.build_model().materialize()
    levy = config.build_levy(model.dim)
    run, grid = config.run, config.grid
    which = Generator(run.generator)
    out, formats = _out_dir(config, args), _formats_of(config, args)

    files: List[str] = []
    terminals = np.empty((run.replicas, model.dim))
    for r in range(run.replicas):
        path = sample_path(model, which, levy, grid.T, grid.base_steps, ReplicaStreams(run.master_seed, r))
        terminals[r] = path.terminal
        if r < run.write_paths:
            if "csv" in formats:
                files.append(str(write_frame_atomic(out / f"path_{r:05d}.csv", path.to_frame())))
            if "json" in formats:
                files.append(str(write_json_atomic(out / f"path_{r:05d}.json", path.to_dict())))

    result: Dict[str, Any] = {"generator": which.value, "replicas": run.replicas, "files": files}
    failures: List[str] = []
    if run.replicas > 1:
        mean, var = theoretical_moments(model, which, levy, grid.T)
        stats = moment_table(terminals, mean, var)
        files.append(str(write_frame_atomic(out / "stats.csv", stats)))
        result["stats"] = stats
        worst = float(np.max(np.abs(stats[["mean_z", "variance_z"]].to_numpy())))
        if worst >= Z_LIMIT:
            failures.append(f"terminal moments off by {worst:.2f} standard errors")
    path = _emit("simulate", config, args, result)
    print(f"✅ Simulated {run.replicas} replicas under {which.value}; wrote {len(files)} files")
    print(f"📁 Manifest: {path}")
    _accept(failures, args)
    return result


def cmd_girsanov(config: ExperimentConfig, args) -> Dict[str, Any]:
    model = config.build_model()
    levy = config.build_levy()
    run, grid = config.run, config.grid
    direction = Direction(run.direction)
    workers = resolve_workers()
    out, formats = _out_dir(config, args), _formats_of(config, args)

    batch = estimate_density_weights(model, levy, direction, run.replicas, run.master_seed,
                                     grid.T, grid.base_steps, workers)
    direct = direct_terminals(model, levy, direction.source, run.replicas, run.master_seed,
                              grid.T, grid.base_steps, workers)
    functionals = ["coordinate", "squared-norm"] if run.functional == "both" else [run.functional]
    reports = {name: density_report(batch, direct, name, run.norm_cap) for name in functionals}
    if "csv" in formats:
        for name, report in reports.items():
            write_frame_atomic(out / f"weights_{name}.csv", report.table)
    path = _emit("girsanov", config, args, {"direction": direction.value, "reports": reports})

    failures = [f"{name}: |z| = {abs(r.z_score):.2f}" for name, r in reports.items() if not r.accepted]
    first = next(iter(reports.values()))
    if abs(first.mean_one_z) >= Z_LIMIT:
        failures.append(f"mean weight {first.mean_weight:.4f} is {first.mean_one_z:.2f} standard errors from 1")
    for name, r in reports.items():
        print(f"{'✅' if r.accepted else '❌'} {name}: direct {r.functional_direct[0]:.5f} ± {r.functional_direct[1]:.5f}, "
              f"reweighted {r.functional_reweighted[0]:.5f} ± {r.functional_reweighted[1]:.5f}, z = {r.z_score:.3f}")
    print(f"📊 Mean weight {first.mean_weight:.4f} ± {first.weight_se:.4f}, ESS {first.ess:.0f}/{first.replicas}")
    print(f"📁 Report: {path}")
    _accept(failures, args)
    return reports


def cmd_rigidity(config: ExperimentConfig, args) -> Dict[str, Any]:
    model = config.build_model()
    levy = config.build_levy()
    run, grid = config.run, config.grid
    report = rigidity_experiment(model, levy.rate_lambda, levy.jump_law, grid.T, run.master_seed, run.replicas,
                                 grid.base_steps, run.epsilon, run.tolerance, levy=levy, workers=resolve_workers())
    if "csv" in _formats_of(config, args):
        write_frame_atomic(_out_dir(config, args) / "residuals.csv", report.table)
    path = _emit("rigidity", config, args, report)

    failures: List[str] = []
    if not report.jumps_recovered:
        failures.append("jump reconstruction missed the true jump record")
    if not report.own_within_tolerance:
        failures.append(f"own-generator residual {report.residual_own:.2e} above tolerance {report.effective_tolerance:.2e}")
    if not report.all_discriminated:
        failures.append(f"only {report.discriminated}/{report.discriminating} replicas discriminated")
    if report.vacuous:
        print("ℹ️ No replica carried a jump: equality holds vacuously")
    print(f"✅ Own residual {report.residual_own:.2e}; wrong-generator residual {report.residual_other:.2e}; "
          f"{report.discriminated}/{report.discriminating} discriminated; paths equal: {report.paths_equal}")
    print(f"📁 Report: {path}")
    _accept(failures, args)
    return report.to_dict()


def cmd_reproduce(config: Optional[ExperimentConfig], args) -> Dict[str, Any]:
    ids = sorted(EXAMPLES) if args.example == "all" else [args.example]
    verdicts = [reproduce_example(example_id) for example_id in ids]
    table = pd.concat([v.to_frame() for v in verdicts], ignore_index=True)
    print("📋 Counterexample verdicts")
    print(table.to_string(index=False))
    if "csv" in _formats_of(config, args):
        write_frame_atomic(_out_dir(config, args) / "reproduce.csv", table)
    path = _emit("reproduce", config, args, {v.example_id: v for v in verdicts})
    print(f"📁 Report: {path}")
    _accept([f"{v.example_id}: got {v.verdicts}" for v in verdicts if not v.reproduced], args)
    return {v.example_id: v.to_dict() for v in verdicts}


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "girsanov": cmd_girsanov,
    "rigidity": cmd_rigidity,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=resolve_log_level(args.verbose), format=LOG_FORMAT, force=True)
    config: Optional[ExperimentConfig] = None
    try:
        if args.command == "reproduce":
            config = _load(args) if args.config else None
            cmd_reproduce(config, args)
        else:
            config = _load(args)
            COMMANDS[args.command](config, args)
    except PreconditionError as e:
        logger.error(str(e))
        path = _emit(args.command, config, args, {"status": "refused", **e.to_dict()})
        print(f"❌ Refused: {e}")
        print(f"📁 Report: {path}")
        return EXIT_PRECONDITION
    except LabError as e:
        logger.error(str(e))
        return e.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
