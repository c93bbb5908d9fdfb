"""Command-line entry point: ``commlim <subcommand> ...``.

Exit codes: 0 success, 1 a check or acceptance criterion failed, 2 usage or
config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import math
import os
import sys
import warnings
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import __version__, acceptance, blackboard, bounds, geometry, models, oracle, risk
from .errors import CommlimError, ConfigError
from .models import ModelSpec

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
PLOT_COLUMNS = ("x", "y", "series", "se")
SLACK_COLUMNS = ("set_id", "P", "norm2", "bound_name", "bound_value", "slack")


# ---------------------------------------------------------------------------
# config loading


def _schema() -> dict:
    return json.loads(resources.files("commlim").joinpath("configs/schema.json").read_text())


def shipped_configs() -> dict:
    """Named configs shipped with the package, e.g. ``acceptance/c04_cap_tightness``."""
    root = resources.files("commlim").joinpath("configs")
    out = {}
    for sub in ("", "acceptance"):
        base = root.joinpath(sub) if sub else root
        for entry in base.iterdir():
            if entry.name.endswith(".json") and entry.name != "schema.json":
                out[f"{sub}/{entry.name[:-5]}" if sub else entry.name[:-5]] = entry
    return out


def _key_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = err.message.split("'")[1] if "'" in err.message else ""
        parts.append(missing)
    elif err.validator == "additionalProperties" and "'" in err.message:
        parts.append(err.message.split("'")[1])
    return ".".join(p for p in parts if p) or "<root>"


def validate_config(cfg: dict) -> dict:
    """Schema validation; the first error (deepest path first) becomes a ConfigError."""
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (-len(e.absolute_path), str(e.absolute_path)))
    if errors:
        err = errors[0]
        # oneOf/anyOf wrappers hide the useful message in their context
        if err.context:
            err = max(err.context, key=lambda e: len(e.absolute_path))
        raise ConfigError(err.message, _key_path(err))
    return cfg


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, assignments: Sequence[str]) -> dict:
    """``key.sub=value`` overrides; values are parsed as JSON when possible."""
    out = json.loads(json.dumps(cfg))
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value", item)
        key, value = item.split("=", 1)
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key!r}: {p!r} is not an object", key)
        node[parts[-1]] = _parse_value(value)
    return out


def load_config(ref: str) -> dict:
    path = Path(ref)
    if path.exists():
        text = path.read_text()
    else:
        named = shipped_configs()
        if ref not in named:
            raise ConfigError(f"no config file or shipped config named {ref!r}", "<path>")
        text = named[ref].read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "<root>") from None


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def resolve_threads(flag: Optional[int]) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("COMMLIM_THREADS")
    if env:
        try:
            val = int(env)
        except ValueError:
            raise ConfigError(f"COMMLIM_THREADS must be a positive integer, got {env!r}", "threads") from None
        if val < 1:
            raise ConfigError(f"COMMLIM_THREADS must be a positive integer, got {env!r}", "threads")
        return val
    return 1


# ---------------------------------------------------------------------------
# mode dispatch


def _grid(cfg: dict):
    g = cfg.get("theta_grid")
    if g is None:
        return risk.GridSpec()
    if isinstance(g, dict):
        return risk.GridSpec(**g)
    return tuple(tuple(p) for p in g)


def experiment_from_config(cfg: dict, threads: int = 1) -> risk.ExperimentConfig:
    return risk.ExperimentConfig(
        model=ModelSpec.from_dict(cfg["model"]),
        protocol=cfg["protocol"],
        n=cfg["n"],
        k=cfg["k"],
        theta_grid=_grid(cfg),
        replications=cfg.get("replications", 100),
        seed=cfg.get("seed", 0),
        experiment_id=cfg.get("experiment_id", "experiment"),
        protocol_options=cfg.get("protocol_options", {}),
        exclude_degenerate=cfg.get("exclude_degenerate", False),
        threads=threads,
    )


@dataclasses.dataclass
class ModeResult:
    body: dict
    csv_rows: list = dataclasses.field(default_factory=list)
    csv_columns: tuple = ()
    ok: bool = True


def _report_body(rep: risk.RiskReport) -> dict:
    # wall-clock time lives in the CSV and manifest only, so JSON bodies reproduce byte for byte
    body = rep.to_dict()
    body.pop("seconds", None)
    for row in body["rows"]:
        row.pop("seconds", None)
    return body


def run_risk(cfg: dict, threads: int) -> ModeResult:
    rep = risk.run_experiment(experiment_from_config(cfg, threads))
    return ModeResult({"mode": "risk", "report": _report_body(rep)}, rep.rows(), risk.CSV_COLUMNS)


def run_scaling(cfg: dict, threads: int) -> ModeResult:
    base = experiment_from_config(cfg, threads)
    sw = cfg["sweep"]
    reports = risk.sweep(base, sw["axis"], sw["values"], couple_n=sw.get("couple_n", False))
    ok_reports = [r for r in reports if isinstance(r, risk.RiskReport)]
    failures = [dataclasses.asdict(r) for r in reports if isinstance(r, risk.SweepFailure)]
    fit_cfg = cfg.get("fit", {})
    regressors = fit_cfg.get("regressors", [{"n": "log n", "d": "log d", "k": "k"}[sw["axis"]]])
    fit = None
    fit_error = None
    try:
        sf = risk.fit_scaling_exponents(ok_reports, regressors, fit_cfg.get("offsets"))
        fit = dataclasses.asdict(sf)
    except (ValueError, CommlimError) as exc:
        fit_error = str(exc)
    rows = []
    for rep in ok_reports:
        for row in rep.rows():
            rows.append(row)
    body = {
        "mode": "scaling", "axis": sw["axis"], "values": sw["values"],
        "points": [{"x": getattr(r, sw["axis"]), "n": r.n, "d": r.d, "k": r.k, "risk": r.sup_risk, "se": r.sup.se,
                    "protocol": r.protocol} for r in ok_reports],
        "reports": [_report_body(r) for r in ok_reports], "failures": failures, "fit": fit, "fit_error": fit_error,
    }
    if fit:
        for row in rows:
            row["fitted_slope"] = fit["coefficients"][regressors[0]]
    return ModeResult(body, rows, risk.CSV_COLUMNS + ("fitted_slope",), not failures)


def _oracle_tree(cfg: dict, model: ModelSpec) -> blackboard.ProtocolTree:
    if "tree" in cfg:
        return blackboard.ProtocolTree.from_dict(cfg["tree"])
    rt = cfg["random_tree"]
    return blackboard.random_tree(rt["n"], rt["budgets"], model, rt.get("seed", 0),
                                  p_fractional=rt.get("p_fractional", 0.0))


def run_oracle(cfg: dict, include_terms: bool = False) -> ModeResult:
    model = ModelSpec.from_dict(cfg["model"])
    tree = _oracle_tree(cfg, model)
    sparse = (model.s, cfg.get("sparse_seed", 0)) if model.family == "sparse_gaussian" else None
    cube = models.hypothesis_cube(model, cfg["delta"], sparse=sparse)
    rep = oracle.kl_chain_quantities(tree, cube)
    body = {"mode": "oracle", "report": rep.to_dict(include_terms or cfg.get("include_terms", False)),
            "cube_size": len(cube), "delta": cube.delta, "n": tree.n, "budgets": list(tree.budgets)}
    ok = min(rep.slacks()) >= -1e-10
    return ModeResult(body, ok=ok)


def run_verify_geometry(cfg: dict) -> ModeResult:
    dims = cfg.get("hypercube_dims", [2, 3, 4])
    rows, body, ok = [], {"mode": "verify-geometry", "hypercube": {}}, True
    for d in dims:
        rep = geometry.exhaustive_hypercube_check(d, psi2_sigma=geometry.score_psi2(geometry.Hypercube(d)))
        ok &= sum(rep.violations.values()) == 0 and abs(rep.max_norm_half - 1.0) <= 1e-12
        body["hypercube"][str(d)] = dataclasses.asdict(rep)
    hg = cfg.get("halfspace_grid", {"lo": -3.0, "hi": 3.0, "points": 601})
    ts = np.linspace(hg.get("lo", -3.0), hg.get("hi", 3.0), hg.get("points", 601))
    model = ModelSpec("gaussian_location", 1)
    sigma = geometry.score_psi2(model)
    recs = geometry.verify_geometric_bounds(model, [geometry.Halfspace((1.0,), float(t)) for t in ts], psi2_sigma=sigma,
                                            ids=[f"halfspace:t={t:.4f}" for t in ts])
    for rec in recs:
        rows.extend(rec.rows())
    ok &= all(r.ok for r in recs)
    body["halfspace"] = {"points": len(recs), "violations": sum(not r.ok for r in recs),
                         "min_slack": {k: min(r.slacks[k] for r in recs) for k in recs[0].slacks}}
    if "cap_d" in cfg:
        sweep = geometry.cap_sweep(cfg["cap_d"])
        best = max(sweep, key=lambda r: r.ratio)
        body["caps"] = {"d": cfg["cap_d"], "best_ratio": best.ratio, "best_radius": best.t,
                        "max_ratio_le_1": all(r.ratio <= 1.0 for r in sweep)}
        for r in sweep:
            p = math.exp(math.log(r.size) - r.d * math.log(2.0))
            rows.append({"set_id": f"cap:d={r.d},t={r.t}", "P": p, "norm2": r.norm2, "bound_name": "gaussian",
                         "bound_value": r.norm2 / r.ratio if r.ratio > 0 else math.inf,
                         "slack": (r.norm2 / r.ratio - r.norm2) if r.ratio > 0 else math.inf})
    return ModeResult(body, rows, SLACK_COLUMNS, ok)


def run_verify_identities(cfg: dict) -> ModeResult:
    res = acceptance.protocol_identities(trees=cfg.get("trees", 1000), n_max=cfg.get("n_max", 3),
                                         k_max=cfg.get("k_max", 2), seed=cfg.get("seed", 0),
                                         p_fractional=cfg.get("p_fractional", 0.3))
    body = {"mode": "verify-protocol-identities", **res.details}
    return ModeResult(body, ok=res.details["violations"] == 0)


def run_bounds(cfg: dict) -> ModeResult:
    q = bounds.RateQuery(**cfg["query"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rate = bounds.lower_rate(q)
    body = {"mode": "bounds", "query": dataclasses.asdict(q), "rate": rate,
            "unmet_preconditions": [str(w.message) for w in caught]}
    return ModeResult(body)


def run_acceptance(cfg: dict) -> ModeResult:
    res = acceptance.run_criterion(cfg["criterion"], **cfg.get("params", {}))
    body = {"mode": "acceptance", **res.to_dict()}
    body.pop("seconds", None)
    return ModeResult(body, ok=res.passed)


def dispatch(cfg: dict, threads: int = 1, include_terms: bool = False) -> ModeResult:
    mode = cfg["mode"]
    if mode == "risk":
        return run_risk(cfg, threads)
    if mode == "scaling":
        return run_scaling(cfg, threads)
    if mode == "oracle":
        return run_oracle(cfg, include_terms)
    if mode == "verify-geometry":
        return run_verify_geometry(cfg)
    if mode == "verify-protocol-identities":
        return run_verify_identities(cfg)
    if mode == "bounds":
        return run_bounds(cfg)
    return run_acceptance(cfg)


# ---------------------------------------------------------------------------
# artifacts


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_csv_rows(path: Path, rows: list, columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def execute_config(cfg: dict, out_dir: Optional[Path], threads: int = 1, include_terms: bool = False) -> tuple:
    """Validate, run and write ``result.json``, optional ``result.csv`` and
    ``manifest.json``.  Returns ``(ModeResult, manifest)``."""
    validate_config(cfg)
    digest = config_digest(cfg)
    started = _now()
    out_dir = Path(out_dir or cfg.get("output_dir") or Path("out") / cfg.get("experiment_id", cfg["mode"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"config_digest": digest, "tool_version": __version__, "seed": cfg.get("seed", 0),
                "started": started, "finished": None, "outputs": [], "status": "running", "config": cfg}
    try:
        result = dispatch(cfg, threads, include_terms)
    except Exception:
        manifest.update(finished=_now(), status="partial")
        (out_dir / "manifest.json").write_text(_dump(manifest))
        raise
    result.body["manifest"] = "manifest.json"
    result.body["config_digest"] = digest
    (out_dir / "result.json").write_text(_dump(result.body))
    outputs = ["result.json"]
    if result.csv_columns:
        write_csv_rows(out_dir / "result.csv", result.csv_rows, result.csv_columns)
        outputs.append("result.csv")
    manifest.update(finished=_now(), outputs=outputs, status="complete" if result.ok else "failed-checks")
    (out_dir / "manifest.json").write_text(_dump(manifest))
    return result, manifest


# ---------------------------------------------------------------------------
# plot data


def emit_plotdata(report_paths: Sequence, out: Path) -> list:
    """Long-format ``x, y, series, se`` CSV from result files.

    Scaling results give one series per protocol and sweep axis, written to a
    separate file per axis; geometry results give slack tables (``x = P``,
    ``y = norm^2``).  Returns the written paths.
    """
    out = Path(out)
    docs = [json.loads(Path(p).read_text()) for p in report_paths]
    if not docs:
        write_csv_rows(out, [], PLOT_COLUMNS)
        return [out]
    modes = {d.get("mode") for d in docs}
    if len(modes) > 1:
        raise ConfigError(f"cannot mix result modes {sorted(m or '?' for m in modes)} in one plot file", "mode")
    mode = modes.pop()
    groups: dict = {}
    if mode == "scaling":
        for doc in docs:
            axis = doc["axis"]
            for p in doc["points"]:
                groups.setdefault(axis, []).append(
                    {"x": p["x"], "y": p["risk"], "series": f"{p['protocol']}:{axis}", "se": p["se"]})
    elif mode == "risk":
        for doc in docs:
            rep = doc["report"]
            groups.setdefault("n", []).append(
                {"x": rep["n"], "y": rep["sup_risk"], "series": f"{rep['protocol']}:n", "se": rep["sup_se"]})
    elif mode == "verify-geometry":
        raise ConfigError("geometry slack tables are emitted directly as result.csv by verify-geometry", "mode")
    else:
        raise ConfigError(f"mode {mode!r} has no plot data", "mode")
    written = []
    if len(groups) == 1:
        (rows,) = groups.values()
        write_csv_rows(out, rows, PLOT_COLUMNS)
        written.append(out)
    else:
        for axis, rows in sorted(groups.items()):
            path = out.with_name(f"{out.stem}_{axis}{out.suffix or '.csv'}")
            write_csv_rows(path, rows, PLOT_COLUMNS)
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (dotted path; JSON values)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--threads", type=int, help="worker threads (default: $COMMLIM_THREADS or 1)")
    p.add_argument("--seed", type=int, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="commlim", description="Communication-limited estimation toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a JSON config (file path or shipped name)")
    p.add_argument("config")
    _add_common(p)

    p = sub.add_parser("oracle", help="exact information chain for a small protocol")
    p.add_argument("config")
    p.add_argument("--terms", action="store_true", help="include the per-(sensor, transcript) breakdown")
    _add_common(p)

    p = sub.add_parser("scaling", help="run a sweep config and fit scaling exponents")
    p.add_argument("config")
    _add_common(p)

    p = sub.add_parser("verify-geometry", help="exhaustive and grid checks of the geometric inequalities")
    p.add_argument("config", nargs="?")
    p.add_argument("--dims", type=int, nargs="+")
    p.add_argument("--cap-d", type=int)
    _add_common(p)

    p = sub.add_parser("verify-protocol-identities", help="total-weight identities on random trees")
    p.add_argument("config", nargs="?")
    p.add_argument("--trees", type=int)
    _add_common(p)

    p = sub.add_parser("bounds", help="evaluate a constant-free lower-bound rate")
    p.add_argument("--theorem", required=True, choices=bounds.THEOREMS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--s", type=int)
    p.add_argument("--i0", type=float)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--R", type=float)

    p = sub.add_parser("emit-plotdata", help="tidy CSV from result.json files")
    p.add_argument("reports", nargs="*", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("acceptance", help="run acceptance criteria and print one line each")
    p.add_argument("criteria", nargs="*", help="criterion numbers (default: all)")
    p.add_argument("--out", type=Path)
    return parser


def _config_for(args, mode: str) -> dict:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = {"mode": mode, "experiment_id": mode}
    if cfg.get("mode") != mode and args.command != "run":
        if args.command == "oracle" or args.command == "scaling":
            raise ConfigError(f"subcommand {args.command} needs mode {mode!r}, config has {cfg.get('mode')!r}", "mode")
    if args.command == "verify-geometry":
        if args.dims:
            cfg["hypercube_dims"] = args.dims
        if args.cap_d:
            cfg["cap_d"] = args.cap_d
    if args.command == "verify-protocol-identities" and args.trees:
        cfg["trees"] = args.trees
    cfg = apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _main(argv: Optional[Sequence[str]]) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bounds":
        q = {k: getattr(args, k) for k in ("theorem", "n", "d", "k", "s", "i0", "sigma2", "R") if getattr(args, k) is not None}
        cfg = validate_config({"mode": "bounds", "query": q})
        print(_dump(run_bounds(cfg).body), end="")
        return EXIT_OK
    if args.command == "emit-plotdata":
        for path in emit_plotdata(args.reports, args.out):
            print(path)
        return EXIT_OK
    if args.command == "acceptance":
        keys = args.criteria or sorted(acceptance.CRITERIA, key=int)
        results = [acceptance.run_criterion(k) for k in keys]
        for r in results:
            print(r.line())
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / "acceptance.json").write_text(_dump([r.to_dict() for r in results]))
        return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL
    mode = {"oracle": "oracle", "scaling": "scaling", "verify-geometry": "verify-geometry",
            "verify-protocol-identities": "verify-protocol-identities"}.get(args.command, "run")
    cfg = _config_for(args, mode)
    threads = resolve_threads(args.threads)
    result, manifest = execute_config(cfg, args.out, threads, include_terms=getattr(args, "terms", False))
    print(_dump(result.body), end="")
    return EXIT_OK if result.ok else EXIT_FAIL


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        return _main(argv)
    except ConfigError as exc:
        print(f"config error at '{exc.key_path}': {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CommlimError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
