"""Batch command line: simulate, fit, diagnose, downsample, reproduce.

Every command reads and writes files; stdout carries a single JSON
summary line on success and stderr carries a machine-readable JSON
error object on failure. Exit codes: 0 success, 1 I/O or experiment
failure, 2 validation error, 3 near-singular system without
``--allow-rank-deficient``.

Flags may also be supplied through ``--config file.json`` holding an
object keyed by flag name (dashes as underscores); explicit flags win
over config-file values.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from fcmlab import fileio
from fcmlab.designs import gen_design
from fcmlab.downsample import to_flm
from fcmlab.errors import FcmlabError, NearSingularError, ValidationError
from fcmlab.estimator import DEFAULT_PIVOT_TOL, DEFAULT_SVD_RTOL, fit
from fcmlab.experiments import EXPERIMENT_NAMES, run_all, run_experiment
from fcmlab.identifiability import DEFAULT_RESIDUAL_TOL, diagnose

__all__ = ["RunConfig", "run", "main"]

_SOLVERS = {"direct": "direct", "svd": "truncated_svd", "ridge": "ridge"}


@dataclass
class RunConfig:
    """Resolved options of one command invocation."""

    command: str
    spec_path: str | None = None
    design_path: str | None = None
    out_path: str | None = None
    solver: str = "direct"
    lam: float = 0.0
    tol: float = DEFAULT_RESIDUAL_TOL
    pivot_tol: float = DEFAULT_PIVOT_TOL
    svd_rel_tol: float = DEFAULT_SVD_RTOL
    seed: int | None = None
    U: float | None = None
    allow_rank_deficient: bool = False
    experiment: str | None = None
    list_experiments: bool = False
    spectrum_csv: str | None = None
    residuals_csv: str | None = None

    def validate(self) -> None:
        inputs = {p for p in (self.spec_path, self.design_path) if p}
        outputs = [p for p in (self.out_path, self.spectrum_csv, self.residuals_csv) if p]
        for out in outputs:
            if out in inputs:
                raise ValidationError(f"output path {out!r} collides with an input path")
        if len(outputs) != len(set(outputs)):
            raise ValidationError("output paths must be distinct")
        if self.lam < 0.0:
            raise ValidationError("--lambda must be nonnegative", field="lambda")
        if not 0.0 < self.tol < 1.0:
            raise ValidationError("--tol must lie in (0, 1)", field="tol")
        if self.U is not None and self.U <= 0.0:
            raise ValidationError("--U must be positive", field="U")
        if self.solver not in _SOLVERS:
            raise ValidationError(
                f"unknown solver {self.solver!r}, expected one of {sorted(_SOLVERS)}",
                field="solver",
            )


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(payload) + "\n")


def _cmd_simulate(config: RunConfig) -> int:
    if not config.spec_path or not config.out_path:
        raise ValidationError("simulate needs --spec and --out")
    (cov_specs, beta_true, noise, n, seed), raw = fileio.read_simulation_spec(config.spec_path)
    if config.seed is not None:
        seed = config.seed
    design, _ = gen_design(cov_specs, beta_true, noise, n, seed)
    out_dir = Path(config.out_path)
    manifest = fileio.write_design(design, out_dir)
    truth = out_dir / "truth.json"
    fileio.write_truth(truth, beta_true, simulation=raw)
    _emit(
        {
            "manifest": str(manifest),
            "truth": str(truth),
            "observations": design.n,
            "seed": seed,
        }
    )
    return 0


def _cmd_fit(config: RunConfig) -> int:
    if not config.design_path or not config.out_path:
        raise ValidationError("fit needs --design and --out")
    design = fileio.read_design(config.design_path)
    solver = _SOLVERS[config.solver]
    try:
        result = fit(
            design,
            solver=solver,
            lam=config.lam,
            pivot_tol=config.pivot_tol,
            svd_rel_tol=config.svd_rel_tol,
        )
    except NearSingularError:
        if not config.allow_rank_deficient:
            raise
        result = fit(design, solver="truncated_svd", svd_rel_tol=config.svd_rel_tol)
    fileio.write_fit_result(config.out_path, result)
    _emit(
        {
            "out": config.out_path,
            "solver_used": result.solver_used,
            "sse": result.sse_value,
            "gram_condition": result.gram_condition,
        }
    )
    return 0


def _cmd_diagnose(config: RunConfig) -> int:
    if not config.design_path or not config.out_path:
        raise ValidationError("diagnose needs --design and --out")
    design = fileio.read_design(config.design_path)
    report = diagnose(design, tol=config.tol)
    fileio.write_diagnosis(config.out_path, report)
    if config.spectrum_csv:
        fileio.write_spectrum_csv(config.spectrum_csv, report.spectrum.eigenvalues)
    if config.residuals_csv:
        fileio.write_residual_curves_csv(config.residuals_csv, report)
    _emit(
        {
            "out": config.out_path,
            "verdict": "identifiable" if report.identifiable else "non-identifiable",
            "numerical_rank": report.spectrum.numerical_rank,
            "block_size": report.spectrum.block_size,
        }
    )
    return 0


def _cmd_downsample(config: RunConfig) -> int:
    if not config.design_path or not config.out_path:
        raise ValidationError("downsample needs --design and --out")
    if config.U is None:
        raise ValidationError("downsample needs --U")
    design = fileio.read_design(config.design_path)
    data = to_flm(design, config.U)
    fileio.write_flm_csv(config.out_path, data)
    _emit({"out": config.out_path, "rows": data.row_count})
    return 0


def _cmd_reproduce(config: RunConfig) -> int:
    if config.list_experiments:
        for name in EXPERIMENT_NAMES:
            sys.stdout.write(name + "\n")
        return 0
    if config.experiment is not None:
        if config.experiment not in EXPERIMENT_NAMES:
            raise ValidationError(
                f"unknown experiment {config.experiment!r}; "
                f"run `reproduce --list` for the registry",
                field="name",
            )
        results = [run_experiment(config.experiment)]
    else:
        results = run_all()
    ok = True
    for result in results:
        for line in result.lines():
            sys.stdout.write(line + "\n")
        ok = ok and result.passed
    return 0 if ok else 1


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "diagnose": _cmd_diagnose,
    "downsample": _cmd_downsample,
    "reproduce": _cmd_reproduce,
}


def run(config: RunConfig) -> int:
    """Execute one command; returns the process exit code."""
    try:
        config.validate()
        return _COMMANDS[config.command](config)
    except NearSingularError as exc:
        _error_json(exc)
        return 3
    except FcmlabError as exc:
        _error_json(exc)
        return 2
    except OSError as exc:
        _error_json(exc)
        return 1


def _error_json(exc: Exception) -> None:
    payload: dict = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ValidationError):
        if exc.source is not None:
            payload["source"] = str(exc.source)
        if exc.line is not None:
            payload["line"] = exc.line
        if exc.field is not None:
            payload["field"] = exc.field
    if isinstance(exc, NearSingularError):
        payload["min_eigenvalue"] = exc.min_eig
        payload["max_eigenvalue"] = exc.max_eig
    sys.stderr.write(json.dumps(payload) + "\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fcmlab",
        description="Convolution-model estimation and identifiability diagnostics "
        "on gridded functional data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON file of default flag values (flags win)")

    p = sub.add_parser("simulate", help="generate a design from a simulation spec")
    add_common(p)
    p.add_argument("--spec", dest="spec_path", help="simulation spec JSON")
    p.add_argument("--out", dest="out_path", help="output directory for manifest and curves")
    p.add_argument("--seed", type=int, help="override the spec seed")

    p = sub.add_parser("fit", help="estimate coefficients from a design manifest")
    add_common(p)
    p.add_argument("--design", dest="design_path", help="design manifest JSON")
    p.add_argument("--out", dest="out_path", help="output fit JSON")
    p.add_argument("--solver", choices=sorted(_SOLVERS), help="direct, svd, or ridge")
    p.add_argument("--lambda", dest="lam", type=float, help="ridge penalty weight")
    p.add_argument("--pivot-tol", dest="pivot_tol", type=float, help="direct-solver rank guard")
    p.add_argument("--svd-tol", dest="svd_rel_tol", type=float, help="relative truncation cutoff")
    p.add_argument(
        "--allow-rank-deficient",
        action="store_true",
        default=None,
        help="fall back to the truncated solver instead of failing with exit 3",
    )

    p = sub.add_parser("diagnose", help="identifiability diagnosis of a design")
    add_common(p)
    p.add_argument("--design", dest="design_path", help="design manifest JSON")
    p.add_argument("--out", dest="out_path", help="output diagnosis JSON")
    p.add_argument("--tol", type=float, help="rank and residual detection tolerance")
    p.add_argument("--spectrum-csv", dest="spectrum_csv", help="also write the spectrum as CSV")
    p.add_argument(
        "--residuals-csv", dest="residuals_csv", help="also write residual-vs-order curves as CSV"
    )

    p = sub.add_parser("downsample", help="export the down-sampled row regression as CSV")
    add_common(p)
    p.add_argument("--design", dest="design_path", help="design manifest JSON")
    p.add_argument("--out", dest="out_path", help="output CSV")
    p.add_argument("--U", dest="U", type=float, help="sampling interval, a multiple of the step")

    p = sub.add_parser("reproduce", help="run named verification experiments")
    add_common(p)
    p.add_argument("--name", dest="experiment", help="experiment name (default: all)")
    p.add_argument("--list", dest="list_experiments", action="store_true", default=None)

    return parser


_CONFIG_FIELDS = (
    "spec_path",
    "design_path",
    "out_path",
    "solver",
    "lam",
    "tol",
    "pivot_tol",
    "svd_rel_tol",
    "seed",
    "U",
    "allow_rank_deficient",
    "experiment",
    "list_experiments",
    "spectrum_csv",
    "residuals_csv",
)

_DEFAULTS = RunConfig(command="fit")


def _resolve(args: argparse.Namespace) -> RunConfig:
    """Merge parsed flags over config-file values over built-in defaults."""
    file_values: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON: {exc}", source=config_path) from None
        if not isinstance(raw, dict):
            raise ValidationError("config file must hold a JSON object", source=config_path)
        for key, value in raw.items():
            name = key.replace("-", "_")
            if name not in _CONFIG_FIELDS:
                raise ValidationError(f"unknown config key {key!r}", source=config_path, field=key)
            file_values[name] = value
    merged: dict = {"command": args.command}
    for name in _CONFIG_FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            merged[name] = flag
        elif name in file_values:
            merged[name] = file_values[name]
        else:
            merged[name] = getattr(_DEFAULTS, name)
    config = RunConfig(**merged)
    config.lam = float(config.lam)
    config.tol = float(config.tol)
    config.pivot_tol = float(config.pivot_tol)
    config.svd_rel_tol = float(config.svd_rel_tol)
    if config.seed is not None:
        config.seed = int(config.seed)
    if config.U is not None:
        config.U = float(config.U)
    config.allow_rank_deficient = bool(config.allow_rank_deficient)
    config.list_experiments = bool(config.list_experiments)
    return config


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _resolve(args)
    except FcmlabError as exc:
        _error_json(exc)
        return 2
    except OSError as exc:
        _error_json(exc)
        return 1
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
