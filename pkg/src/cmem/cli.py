"""Command-line interface.

Subcommands: ``simulate``, ``fit``, ``diagnose``, ``forecast-eval`` and
``simstudy``.  Model and study descriptions live in a JSON config file with
``model``, ``estimation`` and ``simstudy`` sections whose keys mirror the
spec dataclasses; command-line flags override the config.  Results are
emitted as JSON documents (CSV for simulated series and study tables) with
stable key order.  Exit codes: 0 success, 2 parse/config error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

import numpy as np

from .diagnostics import (
    DiagnosticsReport,
    filter_state,
    holdout_evaluate,
    model_vs_sample_report,
    predicted_scaled_variance,
    residual_report,
)
from .errors import (
    CmemError,
    DataFormatError,
    DomainError,
    NumericalError,
    StationarityError,
)
from .estimation import EstimatorKind, FitResult, fit
from .model import MeanSpec, ModelSpec, interval_hi, interval_lo, simulate
from .operators import (
    InnovationSpec,
    OperatorSpec,
    innovation_variance,
    innovation_with_variance,
    three_point_from_sigma2,
)
from .simstudy import FitSpec, SimStudyConfig, run_sim_study

_OPERATOR_ALIASES = {
    "poi": "poisson",
    "poisson": "poisson",
    "nb": "nb",
    "bin": "binomial",
    "binomial": "binomial",
    "zip": "zip",
}
_MAX_COUNT = 2**63 - 1


# ---------------------------------------------------------------------------
# input parsing


def _parse_count(tok: str, path: str, line_no: int) -> int:
    try:
        value = int(tok)
    except ValueError:
        raise DataFormatError(f"{path}: line {line_no}: {tok!r} is not an integer count") from None
    if value < 0:
        raise DataFormatError(f"{path}: line {line_no}: negative count {value}")
    if value > _MAX_COUNT:
        raise DataFormatError(f"{path}: line {line_no}: count {value} overflows the 64-bit range")
    return value


def read_count_series(path: str) -> np.ndarray:
    """Read a count series from a text file.

    Accepts one integer per line, or CSV with a header row where the counts
    sit in the column named "count" (any single-column file is accepted as
    is).  Blank lines are ignored; malformed rows raise
    :class:`DataFormatError` with the line number.
    """
    values: list[int] = []
    col_idx: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            toks = [t.strip() for t in line.split(",")]
            if col_idx is None:
                # first content line decides the layout
                named = [t.lower() for t in toks]
                is_header = False
                for tok in toks:
                    try:
                        int(tok)
                    except ValueError:
                        is_header = True
                        break
                if is_header:
                    if "count" in named:
                        col_idx = named.index("count")
                    elif len(toks) == 1:
                        col_idx = 0
                    else:
                        raise DataFormatError(
                            f"{path}: line {line_no}: header has no 'count' column"
                        )
                    continue
                if len(toks) > 1:
                    raise DataFormatError(
                        f"{path}: line {line_no}: multi-column data needs a header "
                        "with a 'count' column"
                    )
                col_idx = 0
            if col_idx >= len(toks):
                raise DataFormatError(f"{path}: line {line_no}: missing count column")
            values.append(_parse_count(toks[col_idx], path, line_no))
    if not values:
        raise DataFormatError(f"{path}: no count data found")
    return np.asarray(values, dtype=np.int64)


# ---------------------------------------------------------------------------
# config documents


def _require(doc: dict, key: str, where: str) -> dict:
    if key not in doc:
        raise DataFormatError(f"config: missing {where}.{key}" if where else f"config: missing '{key}' section")
    return doc[key]


def operator_from_doc(doc: dict) -> OperatorSpec:
    kind = _OPERATOR_ALIASES.get(str(doc.get("kind", "")).lower())
    if kind is None:
        raise DataFormatError(f"config: unknown operator kind {doc.get('kind')!r}")
    if kind == "zip":
        if "kappa" not in doc:
            raise DataFormatError("config: zip operator needs 'kappa'")
        return OperatorSpec("zip", zip_kappa=float(doc["kappa"]))
    return OperatorSpec(kind)


def innovation_from_doc(doc: dict) -> InnovationSpec:
    kind = str(doc.get("kind", "")).lower()
    if kind in ("degenerate", "poisson"):
        return InnovationSpec(kind)
    if kind == "three_point":
        if "p2" in doc:
            return InnovationSpec("three_point", three_point_p2=float(doc["p2"]))
        if "sigma2" in doc:
            return three_point_from_sigma2(float(doc["sigma2"]))
        raise DataFormatError("config: three_point innovation needs 'p2' or 'sigma2'")
    if kind == "zip":
        if "omega" not in doc:
            raise DataFormatError("config: zip innovation needs 'omega'")
        return InnovationSpec("zip", zip_omega=float(doc["omega"]))
    if kind == "empirical":
        if "pmf" not in doc:
            raise DataFormatError("config: empirical innovation needs 'pmf'")
        return InnovationSpec("empirical", pmf=tuple(float(v) for v in doc["pmf"]))
    raise DataFormatError(f"config: unknown innovation kind {doc.get('kind')!r}")


def mean_from_doc(doc: dict) -> MeanSpec:
    if "a0" not in doc:
        raise DataFormatError("config: mean needs 'a0'")
    soft = doc.get("softplus_c")
    return MeanSpec(
        a0=float(doc["a0"]),
        a=tuple(float(v) for v in doc.get("a", ())),
        b=tuple(float(v) for v in doc.get("b", ())),
        softplus_c=None if soft is None else float(soft),
    )


def model_from_doc(doc: dict) -> ModelSpec:
    return ModelSpec(
        operator=operator_from_doc(_require(doc, "operator", "model")),
        innovation=innovation_from_doc(_require(doc, "innovation", "model")),
        mean=mean_from_doc(_require(doc, "mean", "model")),
    )


def simstudy_config_from_doc(doc: dict, overrides: dict | None = None) -> SimStudyConfig:
    overrides = overrides or {}
    dgps = []
    labels = []
    for i, entry in enumerate(doc.get("dgps", [])):
        model_doc = entry.get("model", entry)
        dgps.append(model_from_doc(model_doc))
        labels.append(str(entry.get("label", f"dgp{i + 1}")))
    fit_specs = []
    for entry in doc.get("fit_specs", []):
        method = str(entry.get("method", "pq")).lower()
        est = EstimatorKind(method, nq_r=float(entry.get("nq_r", 1.0)))
        op = operator_from_doc(_require(entry, "operator", "fit_specs"))
        label = entry.get("label")
        fit_specs.append(FitSpec(est, op, label=label))
    def pick(key, default):
        if key in overrides and overrides[key] is not None:
            return overrides[key]
        return doc.get(key, default)

    return SimStudyConfig(
        dgps=tuple(dgps),
        fit_specs=tuple(fit_specs),
        sample_sizes=tuple(int(v) for v in pick("sample_sizes", (1000,))),
        replications=int(pick("replications", 500)),
        trim_fraction=float(pick("trim_fraction", 0.001)),
        seed=int(pick("seed", 0)),
        burn_in=int(pick("burn_in", 500)),
        order=tuple(int(v) for v in doc.get("order", (1, 1))),
        n_jobs=int(pick("n_jobs", 1)),
        dgp_labels=tuple(labels),
    )


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    resolved = _resolve_config_path(path)
    with open(resolved, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc


def _resolve_config_path(path: str) -> str:
    if os.path.exists(path):
        return path
    # bundled configs can be named without a path, e.g. "desk_reference"
    name = path if path.endswith(".json") else f"{path}.json"
    if os.sep not in path:
        bundle = resources.files("cmem") / "configs" / name
        if bundle.is_file():
            return str(bundle)
    raise DataFormatError(f"config file not found: {path}")


# ---------------------------------------------------------------------------
# result documents


def _round_floats(x):
    if isinstance(x, float):
        return x
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_round_floats(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_round_floats(v) for v in x]
    if isinstance(x, dict):
        return {k: _round_floats(v) for k, v in x.items()}
    return x


def _interval_doc(x):
    if isinstance(x, tuple) and len(x) == 2 and not isinstance(x[0], np.ndarray):
        return [float(x[0]), float(x[1])]
    if isinstance(x, tuple):
        return {"lo": _round_floats(x[0]), "hi": _round_floats(x[1])}
    return _round_floats(x)


def operator_doc(op: OperatorSpec) -> dict:
    doc = {"kind": op.kind}
    if op.zip_kappa is not None:
        doc["kappa"] = op.zip_kappa
    return doc


def _mean_doc(mean: MeanSpec) -> dict:
    doc = {"a0": mean.a0, "a": list(mean.a), "b": list(mean.b)}
    if mean.softplus_c is not None:
        doc["softplus_c"] = mean.softplus_c
    return doc


def _fit_doc(result: FitResult, input_path: str, n: int) -> dict:
    p, q = result.order
    names = ["a0"] + [f"a{i}" for i in range(1, p + 1)] + [f"b{j}" for j in range(1, q + 1)]
    estimates = dict(zip(names, (float(v) for v in result.theta_hat)))
    estimates["sigma2"] = float(result.sigma2_hat)
    if result.ase is not None:
        ase = dict(zip(names + ["sigma2"], (float(v) for v in result.ase)))
    else:
        ase = None
    return {
        "input": {"path": input_path, "n": n},
        "config": {
            "method": result.method,
            "nq_r": result.nq_r,
            "order": list(result.order),
            "operator": operator_doc(result.operator),
            "init": _mean_doc(result.init_used) if result.init_used is not None else None,
            "startup": "sample-mean",
        },
        "estimates": estimates,
        "ase": ase,
        "fit": {
            "objective": float(result.objective_value),
            "converged": bool(result.converged),
            "iterations": int(result.iterations),
            "warnings": list(result.warnings),
        },
    }


def _diagnostics_doc(report: DiagnosticsReport, acf_lags: int = 10) -> dict:
    return {
        "n": report.n,
        "mar": report.mar,
        "msr": report.msr,
        "vsr": report.vsr,
        "mspr": report.mspr,
        "predicted_vsr": _interval_doc(report.predicted_vsr),
        "residual_acf": _round_floats(report.residual_acf[:acf_lags]),
    }


def _emit_text(text: str, output: str | None) -> None:
    if output is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)
            if not text.endswith("\n"):
                fh.write("\n")


def _emit_doc(doc: dict, output: str | None) -> None:
    _emit_text(json.dumps(_round_floats(doc), indent=2), output)


# ---------------------------------------------------------------------------
# subcommands


def _estimation_settings(args, config: dict):
    est_doc = config.get("estimation", {})
    method = args.method if args.method else est_doc.get("method", "pq")
    nq_r = args.nq_r if args.nq_r is not None else float(est_doc.get("nq_r", 1.0))
    if args.order:
        try:
            p, q = (int(v) for v in args.order.split(","))
        except ValueError:
            raise DataFormatError(f"--order expects 'p,q', got {args.order!r}") from None
        order = (p, q)
    else:
        order = tuple(int(v) for v in est_doc.get("order", (1, 1)))
    if args.operator:
        op_doc = {"kind": args.operator}
        if args.zip_kappa is not None:
            op_doc["kappa"] = args.zip_kappa
        op = operator_from_doc(op_doc)
    elif "operator" in est_doc:
        op = operator_from_doc(est_doc["operator"])
    else:
        op = OperatorSpec("poisson")
    return EstimatorKind(str(method).lower(), nq_r=nq_r), order, op


def _cmd_simulate(args) -> int:
    config = _load_config(args.config)
    if "model" not in config:
        raise DataFormatError("simulate needs a config file with a 'model' section")
    model = model_from_doc(config["model"])
    if args.n is None or args.n < 1:
        raise DataFormatError("simulate needs --n >= 1")
    rng = np.random.default_rng(args.seed)
    x, m = simulate(model, args.n, rng, burn_in=args.burn_in)
    lines = ["count,mean"]
    lines += [f"{int(xi)},{mi:.10g}" for xi, mi in zip(x, m)]
    _emit_text("\n".join(lines), args.output)
    return 0


def _fit_from_args(args, x: np.ndarray):
    config = _load_config(args.config)
    kind, order, op = _estimation_settings(args, config)
    return fit(kind, x, order=order, operator=op), op


def _cmd_fit(args) -> int:
    x = read_count_series(args.input)
    result, op = _fit_from_args(args, x)
    doc = {"command": "fit", **_fit_doc(result, args.input, x.size)}
    report = residual_report(x, result.fitted_means, op, result.sigma2_hat)
    doc["diagnostics"] = _diagnostics_doc(report)
    _emit_doc(doc, args.output)
    return 0


def _cmd_diagnose(args) -> int:
    x = read_count_series(args.input)
    result, op = _fit_from_args(args, x)
    doc = {"command": "diagnose", **_fit_doc(result, args.input, x.size)}
    predicted = None
    comparison = None
    if result.sigma2_hat >= 0.0:
        innov = innovation_with_variance(result.sigma2_hat)
        model = ModelSpec(operator=op, innovation=innov, mean=result.mean_hat)
        comparison = model_vs_sample_report(x, model)
        predicted = predicted_scaled_variance(op, result.sigma2_hat, comparison.model)
    report = residual_report(
        x, result.fitted_means, op, result.sigma2_hat, predicted_vsr=predicted
    )
    doc["diagnostics"] = _diagnostics_doc(report)
    if comparison is not None:
        doc["model_vs_sample"] = {
            "sample": {
                "mean": comparison.sample_mean,
                "var": comparison.sample_var,
                "rho": _round_floats(comparison.sample_rho),
            },
            "model": {
                "mean": comparison.model.mu,
                "var": _interval_doc(comparison.model.var),
                "rho": _interval_doc(comparison.model.rho),
            },
        }
    else:
        doc["model_vs_sample"] = None
        doc["fit"]["warnings"] = doc["fit"]["warnings"] + [
            "negative innovation-variance estimate; model-implied moments skipped"
        ]
    _emit_doc(doc, args.output)
    return 0


def _cmd_forecast_eval(args) -> int:
    x = read_count_series(args.input)
    h = args.holdout
    if h is None or h < 1 or h >= x.size:
        raise DataFormatError("--holdout must be in [1, n-1]")
    train, hold = x[:-h], x[-h:]
    result, op = _fit_from_args(args, train)
    state = filter_state(train, result)
    report = holdout_evaluate(result, state, hold, op)
    doc = {"command": "forecast-eval", **_fit_doc(result, args.input, train.size)}
    doc["holdout"] = _diagnostics_doc(report)
    _emit_doc(doc, args.output)
    return 0


def _cmd_simstudy(args) -> int:
    config = _load_config(args.config)
    if "simstudy" not in config:
        raise DataFormatError("simstudy needs a config file with a 'simstudy' section")
    overrides = {
        "replications": args.replications,
        "seed": args.seed,
        "trim_fraction": args.trim,
        "n_jobs": args.jobs,
    }
    study = simstudy_config_from_doc(config["simstudy"], overrides)
    result = run_sim_study(study)
    text = result.format_params()
    flagged = result.fits[result.fits["flagged"]]
    if len(flagged):
        text += "\nflagged cells (more than 5% failed fits):\n"
        text += flagged.to_string(index=False) + "\n"
    if args.output:
        result.params.to_csv(f"{args.output}_params.csv", index=False)
        result.fits.to_csv(f"{args.output}_fits.csv", index=False)
        sys.stdout.write(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmem",
        description="Multiplicative count models: simulation, fitting, diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp, with_fit_flags: bool = True):
        sp.add_argument("--config", help="JSON config file (or bundled config name)")
        sp.add_argument("--output", help="output file (default: stdout)")
        if with_fit_flags:
            sp.add_argument("--method", choices=["pq", "nq", "eq", "1w", "2w"])
            sp.add_argument("--operator", choices=sorted(_OPERATOR_ALIASES))
            sp.add_argument("--zip-kappa", type=float, dest="zip_kappa")
            sp.add_argument("--order", help="model order as 'p,q' (default 1,1)")
            sp.add_argument("--nq-r", type=float, dest="nq_r")

    sp = sub.add_parser("simulate", help="simulate a series from a model config")
    add_common(sp, with_fit_flags=False)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--burn-in", type=int, default=500, dest="burn_in")
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("fit", help="fit a model to a count series")
    sp.add_argument("input", help="count series (one integer per line or CSV)")
    add_common(sp)
    sp.set_defaults(func=_cmd_fit)

    sp = sub.add_parser("diagnose", help="fit and report residual diagnostics")
    sp.add_argument("input")
    add_common(sp)
    sp.set_defaults(func=_cmd_diagnose)

    sp = sub.add_parser("forecast-eval", help="fit on a prefix, evaluate on a holdout")
    sp.add_argument("input")
    add_common(sp)
    sp.add_argument("--holdout", type=int, help="number of trailing observations held out")
    sp.set_defaults(func=_cmd_forecast_eval)

    sp = sub.add_parser("simstudy", help="run a Monte-Carlo study from a config")
    add_common(sp, with_fit_flags=False)
    sp.add_argument("--replications", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trim", type=float)
    sp.add_argument("--jobs", type=int)
    sp.set_defaults(func=_cmd_simstudy)
    return parser


def _error_record(exc: Exception, exit_code: int) -> None:
    record = {
        "error": {
            "type": type(exc).__name__,
            "message": str(exc),
            "exit_code": exit_code,
        }
    }
    print(json.dumps(record), file=sys.stderr)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        return 0 if code == 0 else 2
    try:
        return args.func(args)
    except (DataFormatError, FileNotFoundError) as exc:
        _error_record(exc, 2)
        return 2
    except (DomainError, StationarityError) as exc:
        _error_record(exc, 2)
        return 2
    except (NumericalError, CmemError, np.linalg.LinAlgError) as exc:
        _error_record(exc, 3)
        return 3


if __name__ == "__main__":
    sys.exit(main())
