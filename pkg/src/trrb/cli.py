"""Command-line entry point: optimization runs, reference optima, estimator study, validation.

Exit codes: 0 completed (nonconvergence is recorded, not fatal), 2 usage
error, 3 IO error (including a missing reference optimum), 4 validation
failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .benchmarks import build_problem
from .errors import InvalidArgumentError, ReferenceMissingError
from .optimizer import (TrustRegionConfig, fom_projected_bfgs, reference_parameter,
                        tr_rb_optimize)
from .study import EFFICIENCY_PAIRS, ESTIMATOR_COLUMNS, StudyConfig, greedy_estimator_study, log_slope
from .validation import ValidationConfig, run_property_suite

log = logging.getLogger("trrb")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 2, 3, 4
PROBLEMS = ("fin", "building")
RUN_VARIANTS = ("standard", "semi-ncd", "ncd", "qian", "fom-bfgs")
REFERENCE_TAU = 1e-12
RUN_COLUMNS = ("k", "branch", "accepted", "J", "foc", "delta", "delta_next", "rho", "J_agc",
               "J_next_model", "stop_measure", "n_pr", "n_du", "inner_iterations", "fom_solves",
               "wall_time")
SUMMARY_COLUMNS = ("method", "runs", "converged", "runtime_avg", "runtime_min", "runtime_max",
                   "iterations_avg", "iterations_min", "iterations_max", "fom_solves_avg",
                   "rel_error_avg", "rel_error_max", "foc_avg", "foc_max", "statuses")
MASK64 = (1 << 64) - 1


class UsageError(Exception):
    pass


def splitmix64(state: int) -> tuple:
    """One splitmix64 step: returns (next state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seeds(master: int, n: int) -> list:
    """Per-run seeds from one master seed; run i depends only on (master, i)."""
    seeds, state = [], master & MASK64
    for _ in range(n):
        state, out = splitmix64(state)
        seeds.append(out)
    return seeds


def initial_parameter(space, seed: int) -> np.ndarray:
    return space.sample(np.random.default_rng(seed))


@dataclass
class RunConfig:
    problem: str
    resolution: tuple | None
    variant: str = "ncd"
    enrichment: str = "lagrangian"
    tau_foc: float | None = None
    seeds: list = field(default_factory=list)
    output: Path = Path("results")
    trust_region: TrustRegionConfig = field(default_factory=TrustRegionConfig)
    fin_seed: int = 0
    reference: Path | None = None

    @property
    def label(self) -> str:
        if self.variant in ("fom-bfgs", "qian"):
            return self.variant
        return f"{self.variant}-{self.enrichment}"


# -- formatting ---------------------------------------------------------------------------

def fmt(x) -> str:
    """Shortest round-trip text for floats; stable across runs."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def config_echo(cfg: RunConfig, extra: dict | None = None) -> list:
    lines = [f"problem={cfg.problem}", f"resolution={_resolution_text(cfg.resolution)}",
             f"variant={cfg.variant}", f"enrichment={cfg.enrichment}"]
    lines += [f"{k}={fmt(v)}" for k, v in dataclasses.asdict(cfg.trust_region).items()]
    lines += [f"{k}={fmt(v)}" for k, v in (extra or {}).items()]
    return lines


def _resolution_text(res) -> str:
    return "default" if res is None else "x".join(str(r) for r in res)


def write_csv(path: Path, header_lines: list, columns, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row[c]) for c in columns])


def read_csv(path: Path) -> list:
    """Rows of a CSV written by ``write_csv``, comment lines skipped."""
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


# -- problem and config plumbing ----------------------------------------------------------

def _build(cfg: RunConfig):
    res = cfg.resolution
    if cfg.problem == "fin" and res is not None:
        if len(res) != 1:
            raise UsageError("fin resolution is a single cells-per-unit value")
        res = res[0]
    if cfg.problem == "building" and res is not None and len(res) != 2:
        raise UsageError("building resolution needs NX NY")
    return build_problem(cfg.problem, res, seed=cfg.fin_seed)


def load_trust_region(path: Path | None, tau_foc: float | None) -> TrustRegionConfig:
    """Defaults overridden by the ``[trust_region]`` section of an INI file, then by --tau-foc."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(f"cannot read config file {path}")
        if parser.has_section("trust_region"):
            types = {f.name: f.type for f in dataclasses.fields(TrustRegionConfig)}
            for key, raw in parser.items("trust_region"):
                if key not in types:
                    raise UsageError(f"unknown trust_region key {key!r}")
                cast = int if types[key] in (int, "int") else float
                try:
                    values[key] = cast(raw)
                except ValueError as exc:
                    raise UsageError(f"bad value for {key}: {raw!r}") from exc
    if tau_foc is not None:
        values["tau_foc"] = tau_foc
        values.setdefault("tau_sub", min(TrustRegionConfig.tau_sub, tau_foc))
    return TrustRegionConfig(**values)


def reference_path(cfg: RunConfig) -> Path:
    return cfg.reference if cfg.reference is not None else cfg.output / "reference.json"


def load_reference(cfg: RunConfig, fom, info) -> np.ndarray:
    """Reference optimum for relative errors; the fin optimum is its desired parameter."""
    path = reference_path(cfg)
    if path.exists():
        data = json.loads(path.read_text())
        if data.get("problem") != cfg.problem or data.get("resolution") != _resolution_text(cfg.resolution):
            raise ReferenceMissingError(
                f"{path} holds a reference for {data.get('problem')} {data.get('resolution')}")
        return np.array(data["mu"], dtype=float)
    if cfg.problem == "fin":
        return info.mu_desired.copy()
    raise ReferenceMissingError(f"no reference optimum at {path}; run `trrb reference` first")


# -- commands --------------------------------------------------------------------------------

def run_one(fom, cfg: RunConfig, seed: int):
    mu0 = initial_parameter(fom.space, seed)
    if cfg.variant == "fom-bfgs":
        return fom_projected_bfgs(fom, mu0, cfg.trust_region)
    return tr_rb_optimize(fom, mu0, cfg.trust_region, cfg.variant, cfg.enrichment)


def record_rows(records, dim: int) -> tuple:
    columns = RUN_COLUMNS + tuple(f"mu_{i}" for i in range(dim))
    rows = []
    for r in records:
        row = {c: getattr(r, c) for c in RUN_COLUMNS}
        row.update({f"mu_{i}": r.mu[i] for i in range(dim)})
        rows.append(row)
    return columns, rows


def summarize(label: str, results: list, mu_ref: np.ndarray) -> dict:
    times = np.array([r.wall_time for r in results])
    its = np.array([r.iterations for r in results])
    errs = np.array([np.linalg.norm(r.mu - mu_ref) / np.linalg.norm(mu_ref) for r in results])
    focs = np.array([r.foc for r in results])
    return {
        "method": label, "runs": len(results), "converged": sum(r.converged for r in results),
        "runtime_avg": times.mean(), "runtime_min": times.min(), "runtime_max": times.max(),
        "iterations_avg": its.mean(), "iterations_min": int(its.min()), "iterations_max": int(its.max()),
        "fom_solves_avg": float(np.mean([r.fom_solves for r in results])),
        "rel_error_avg": errs.mean(), "rel_error_max": errs.max(),
        "foc_avg": focs.mean(), "foc_max": focs.max(),
        "statuses": ";".join(r.status for r in results),
    }


def cmd_run(cfg: RunConfig) -> int:
    fom, info = _build(cfg)
    mu_ref = load_reference(cfg, fom, info)
    results = []
    for seed in cfg.seeds:
        res = run_one(fom, cfg, seed)
        log.info("%s seed %d: %s after %d iterations, FOC %.3e", cfg.label, seed, res.status,
                 res.iterations, res.foc)
        columns, rows = record_rows(res.records, fom.dim)
        write_csv(cfg.output / f"run_{cfg.label}_{seed}.csv",
                  config_echo(cfg, {"seed": seed, "status": res.status}), columns, rows)
        results.append(res)
    summary = summarize(cfg.label, results, mu_ref)
    write_csv(cfg.output / f"summary_{cfg.label}.csv", config_echo(cfg, {"seeds": " ".join(map(str, cfg.seeds))}),
              SUMMARY_COLUMNS, [summary])
    print(f"{cfg.label}: {summary['converged']}/{summary['runs']} converged, "
          f"iterations {summary['iterations_avg']:.2f} ({summary['iterations_min']}/{summary['iterations_max']}), "
          f"rel. error {summary['rel_error_avg']:.2e}, FOC {summary['foc_avg']:.2e}")
    return EXIT_OK


def cmd_reference(cfg: RunConfig, start=None) -> int:
    fom, info = _build(cfg)
    mu0 = fom.space.project(0.5 * (fom.space.lower + fom.space.upper)) if start is None else start
    res = reference_parameter(fom, mu0, cfg.trust_region, tau=REFERENCE_TAU)
    verdict = fom.check_second_order(res.mu)
    data = {"problem": cfg.problem, "resolution": _resolution_text(cfg.resolution),
            "mu": [float(x) for x in res.mu], "J": fom.objective(res.mu), "foc": res.foc,
            "status": res.status, "second_order_accepted": bool(verdict.accepted),
            "second_order_min_eigenvalue": float(verdict.min_eigenvalue)}
    path = reference_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2) + "\n")
    print(f"reference written to {path}: FOC {res.foc:.3e}, second-order "
          f"{'accepted' if verdict.accepted else 'rejected'}")
    return EXIT_OK


def cmd_estimator_study(cfg: RunConfig, study: StudyConfig) -> int:
    fom, _ = _build(cfg)
    result = greedy_estimator_study(fom, study)
    echo = config_echo(cfg, {**dataclasses.asdict(study), "complete": result.complete})
    write_csv(cfg.output / "estimator_study.csv", echo, ESTIMATOR_COLUMNS, result.rows)
    x = [r["est_pr"] for r in result.rows]
    errors = sorted({r for _, r in EFFICIENCY_PAIRS.values()})
    slopes = [{"quantity": c, "slope_vs_est_pr": log_slope(x, [r[c] for r in result.rows])} for c in errors]
    write_csv(cfg.output / "estimator_study_slopes.csv", echo, ("quantity", "slope_vs_est_pr"), slopes)
    print(f"estimator study: {result.extensions} extensions, complete={result.complete}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, inject_fault: bool = False) -> int:
    fom, _ = _build(cfg)
    checks = run_property_suite(fom, ValidationConfig(alpha_scale=10.0 if inject_fault else 1.0))
    for c in checks:
        print(f"{'PASS' if c.ok else 'FAIL'} {c.name}: {c.detail}")
    failed = sum(not c.ok for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VALIDATION


# -- argument parsing -------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", choices=PROBLEMS, default="building")
    common.add_argument("--resolution", type=int, nargs="+", metavar="N",
                        help="fin: cells per unit length; building: NX NY")
    common.add_argument("--output", type=Path, default=Path("results"))
    common.add_argument("--config", type=Path, help="INI file with a [trust_region] section")
    common.add_argument("--tau-foc", type=float)
    common.add_argument("--fin-seed", type=int, default=0, help="seed of the fin's desired parameter")
    common.add_argument("--reference", type=Path, help="reference optimum file (default OUTPUT/reference.json)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="trrb", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="optimize from random starting parameters")
    run.add_argument("--variant", choices=RUN_VARIANTS, default="ncd")
    run.add_argument("--enrichment", choices=("lagrangian", "single"), default="lagrangian")
    seeds = run.add_mutually_exclusive_group()
    seeds.add_argument("--seeds", type=int, default=10, help="number of runs")
    seeds.add_argument("--seed-list", type=int, nargs="+", help="explicit per-run seeds")
    run.add_argument("--seed", type=int, default=0, help="master seed expanded by splitmix64")

    sub.add_parser("reference", parents=[common], help="compute the reference optimum")

    study = sub.add_parser("estimator-study", parents=[common], help="greedy estimator study")
    study.add_argument("--tau-j", type=float, default=StudyConfig.tau_J)
    study.add_argument("--tau-grad", type=float, default=StudyConfig.tau_grad)
    study.add_argument("--training-size", type=int, default=StudyConfig.training_size)
    study.add_argument("--validation-size", type=int, default=StudyConfig.validation_size)
    study.add_argument("--max-extensions", type=int, default=StudyConfig.max_extensions)
    study.add_argument("--seed", type=int, default=0)

    validate = sub.add_parser("validate", parents=[common], help="run the property suite")
    validate.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    return parser


def _run_config(args) -> RunConfig:
    cfg = RunConfig(args.problem, None if args.resolution is None else tuple(args.resolution),
                    output=args.output, trust_region=load_trust_region(args.config, args.tau_foc),
                    fin_seed=args.fin_seed, reference=args.reference)
    if args.command == "run":
        cfg.variant, cfg.enrichment, cfg.tau_foc = args.variant, args.enrichment, args.tau_foc
        if args.seed_list is not None:
            cfg.seeds = list(args.seed_list)
        elif args.seeds < 1:
            raise UsageError("--seeds must be positive")
        else:
            cfg.seeds = derive_seeds(args.seed, args.seeds)
    return cfg


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _run_config(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "reference":
            return cmd_reference(cfg)
        if args.command == "estimator-study":
            return cmd_estimator_study(cfg, StudyConfig(args.tau_j, args.tau_grad, args.training_size,
                                                        args.validation_size, args.seed, args.max_extensions))
        return cmd_validate(cfg, args.inject_fault)
    except (UsageError, InvalidArgumentError) as exc:
        print(f"trrb: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"trrb: IO error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
