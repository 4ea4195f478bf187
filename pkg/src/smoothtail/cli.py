"""Command-line front end: config parsing, orchestration, artifacts.

Subcommands: analyze, simulate, fixpoint, walk, tail, verify.  Each one
loads a model from a JSON file, runs the corresponding module pipeline
with a deterministic seed, and writes its artifacts under --output-dir
(mellin.json, samples.csv, grid.csv, poisson.csv, fixpoint.json,
walk.json, walk.csv, tail.json, verify.json).  Every artifact embeds
the configuration hash, tool version, seed and worker count; rerunning
a subcommand with the same configuration rewrites byte-identical files
(the verify record's timestamp and wall-time fields excepted).

Exit codes: 0 success, 1 verification/check failure, 2 usage or
configuration error.  Configuration problems are reported with a
JSON-pointer path into the offending field.

The worker count (--workers, or the SMOOTHTAIL_WORKERS environment
override) is recorded in every artifact but does not enter the
configuration hash: all samplers draw from per-item counter streams,
so results are identical under any work partition by construction.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, laplace, mellin, models, tails, tilted, tree
from .errors import (NoFiniteWindow, NotNormalized, SmoothtailError,
                     WindowEmpty)
from .verify import config_hash, run_verify

__all__ = ["main", "build_parser", "ConfigError"]

_REGIME_NAMES = {
    "TwoRoot": "two_root",
    "CriticalTangent": "critical_tangent",
    "StrictlySubcriticalWindow": "strictly_subcritical_window",
    "NoRootBelowOne": "no_root_below_one",
}


class ConfigError(Exception):
    """Configuration problem, carrying a JSON-pointer to the field."""

    def __init__(self, pointer: str, message: str):
        super().__init__(f"config error at {pointer}: {message}")
        self.pointer = pointer
        self.message = message


# ---------------------------------------------------------------------------
# config parsing helpers

def _load_model(path: str):
    """Read and validate a ModelSpec JSON file -> (spec, dict)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("/model", f"cannot read {path!r}: {exc}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("/model", f"invalid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("/model", "model must be a JSON object")
    for role in ("offspring", "weight", "inhom"):
        if role not in d:
            raise ConfigError(f"/model/{role}", "missing block")
        try:
            models._law_from_dict(role, d[role])
        except ValueError as exc:
            raise ConfigError(f"/model/{role}", str(exc)) from None
    try:
        spec = models.spec_from_dict(d)
    except ValueError as exc:
        raise ConfigError("/model", str(exc)) from None
    return spec, models.spec_to_dict(spec)


def _parse_reals(text: str, n: int, pointer: str, names: str):
    parts = text.split(",")
    if len(parts) != n:
        raise ConfigError(pointer, f"expected {names}, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(pointer, f"non-numeric value in {text!r}") from None


def _parse_policy(text: str) -> tree.PrunePolicy:
    eps, depth, nodes = _parse_reals(text, 3, "/simulate/policy",
                                     "eps,depth,nodes")
    try:
        return tree.PrunePolicy(weight_floor=eps, depth_cap=int(depth),
                                node_cap=int(nodes))
    except ValueError as exc:
        raise ConfigError("/simulate/policy", str(exc)) from None


def _parse_grid(text: str):
    t_min, t_max, ppd = _parse_reals(text, 3, "/fixpoint/grid",
                                     "tmin,tmax,ppd")
    if not (0.0 < t_min < t_max) or ppd < 1:
        raise ConfigError("/fixpoint/grid",
                          f"need 0 < tmin < tmax and ppd >= 1, got {text!r}")
    return t_min, t_max, int(ppd)


def _parse_window(text: str, pointer: str):
    lo, hi = _parse_reals(text, 2, pointer, "lo,hi")
    if not (0.0 < lo < hi):
        raise ConfigError(pointer, f"need 0 < lo < hi, got {text!r}")
    return lo, hi


def _parse_x_grid(text: str) -> np.ndarray:
    parts = [p for p in text.split(",") if p.strip()]
    try:
        xs = np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError:
        raise ConfigError("/walk/x_grid",
                          f"non-numeric value in {text!r}") from None
    if xs.size == 0:
        raise ConfigError("/walk/x_grid", "x grid is empty")
    return xs


# ---------------------------------------------------------------------------
# artifact emission

def _clean(obj):
    """Make a payload strict-JSON safe (NaN/inf -> null), recursively."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    return obj


def _write_json(path: Path, payload: dict) -> None:
    text = json.dumps(_clean(payload), indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, meta: dict, header, columns) -> None:
    """CSV with '#'-prefixed metadata lines, then header, then rows."""
    cols = [np.asarray(c) for c in columns]
    n = cols[0].shape[0]
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}={v}\n")
        fh.write(",".join(header) + "\n")
        chunk = 65536
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            rows = []
            for i in range(lo, hi):
                rows.append(",".join(_fmt(c[i]) for c in cols))
            fh.write("\n".join(rows))
            if hi > lo:
                fh.write("\n")


def _base_config(args, command: str, model_dict, params: dict) -> dict:
    return {
        "command": command,
        "model": model_dict,
        "params": params,
        "seed": args.seed,
    }


def _artifact_fields(args, cfg_hash: str) -> dict:
    return {
        "config_hash": cfg_hash,
        "tool_version": __version__,
        "seed": args.seed,
        "workers": args.workers,
    }


def _csv_meta(args, cfg_hash: str, label: str, extra: dict) -> dict:
    meta = {"model": label or "unnamed"}
    meta.update(extra)
    meta.update({
        "seed": args.seed,
        "workers": args.workers,
        "tool_version": __version__,
        "config_hash": cfg_hash,
    })
    return meta


def _out_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _detect_alpha(spec) -> tuple:
    """(report, alpha): tangent root when critical, else NaN."""
    report = mellin.find_roots(spec)
    if report.regime == "CriticalTangent":
        return report, report.roots[0].s
    return report, math.nan


# ---------------------------------------------------------------------------
# subcommands

def cmd_analyze(args) -> int:
    spec, model_dict = _load_model(args.model)
    cfg = _base_config(args, "analyze", model_dict, {})
    h = config_hash(cfg)
    report = mellin.find_roots(spec)
    if report.regime == "CriticalTangent":
        alpha = report.roots[0].s
    elif report.regime == "TwoRoot":
        # the ascending root governs the power tail in the two-root case
        alpha = report.roots[-1].s
    else:
        alpha = None
    flags = None
    if report.flags is not None:
        f = report.flags
        flags = {
            "EN_gt_1": f.EN_gt_1,
            "nonarithmetic": f.nonarithmetic,
            "moments_finite": f.moments_finite,
            "delta": f.delta,
            "moments": dict(f.moments),
        }
    payload = {
        "regime": _REGIME_NAMES[report.regime],
        "roots": [{"s": r.s, "m_prime": r.m_prime} for r in report.roots],
        "alpha": alpha,
        "delta": report.delta,
        "window": list(report.window) if report.window else None,
        "stderr_at_min": report.stderr_at_min,
        "model_label": spec.label,
    }
    payload.update(_artifact_fields(args, h))
    payload["flags"] = flags
    out = _out_dir(args)
    _write_json(out / "mellin.json", payload)
    print(f"mellin.json: regime={payload['regime']} alpha={alpha} "
          f"roots={[r.s for r in report.roots]}")
    return 0


def cmd_simulate(args) -> int:
    spec, model_dict = _load_model(args.model)
    if args.samples < 1:
        raise ConfigError("/simulate/samples", "need at least one sample")
    policy = _parse_policy(args.policy)
    cfg = _base_config(args, "simulate", model_dict, {
        "samples": args.samples,
        "policy": [policy.weight_floor, policy.depth_cap, policy.node_cap],
    })
    h = config_hash(cfg)
    batch = tree.sample_R_batch(spec, args.samples, policy=policy,
                                seed=args.seed)
    out = _out_dir(args)
    meta = _csv_meta(args, h, spec.label, {
        "samples": args.samples,
        "policy": f"{policy.weight_floor:g},{policy.depth_cap},"
                  f"{policy.node_cap}",
        "censor_limit": f"{policy.censor_limit:g}",
    })
    _write_csv(out / "samples.csv", meta,
               ["r_value", "pruned_weight", "max_weight", "capped"],
               [batch.r_value, batch.pruned_weight, batch.max_weight,
                batch.capped.astype(np.int64)])
    frac_capped = float(np.mean(batch.capped))
    frac_cens = float(np.mean(batch.censored))
    print(f"samples.csv: n={args.samples} capped={frac_capped:.3g} "
          f"censored={frac_cens:.3g} mean_nodes="
          f"{float(np.mean(batch.nodes_expanded)):.1f}")
    return 0


def cmd_fixpoint(args) -> int:
    spec, model_dict = _load_model(args.model)
    t_min, t_max, ppd = _parse_grid(args.grid)
    if args.pool < 2:
        raise ConfigError("/fixpoint/pool", "pool must hold >= 2 samples")
    alpha = args.alpha
    if alpha is None:
        _, alpha = _detect_alpha(spec)
    tol = args.tol
    if tol is None:
        # the critical iteration stalls on its center manifold near 1e-7,
        # so the default tolerance loosens when a tilt exponent is active
        tol = 1e-6 if math.isfinite(alpha) else 1e-9
    cfg = _base_config(args, "fixpoint", model_dict, {
        "grid": [t_min, t_max, ppd],
        "pool": args.pool,
        "tol": tol,
        "alpha": None if not math.isfinite(alpha) else alpha,
    })
    h = config_hash(cfg)
    grid = laplace.iterate_phi(spec, t_min=t_min, t_max=t_max,
                               points_per_decade=ppd, pool_size=args.pool,
                               tol=tol, seed=args.seed, alpha=alpha)
    out = _out_dir(args)
    meta = _csv_meta(args, h, spec.label, {
        "grid": f"{t_min:g},{t_max:g},{ppd}",
        "pool": args.pool,
        "tol": f"{tol:g}",
        "alpha": f"{alpha:g}" if math.isfinite(alpha) else "none",
    })
    _write_csv(out / "grid.csv", meta, ["t", "phi"], [grid.t, grid.phi])
    payload = {
        "iterations": grid.iterations,
        "residual": grid.residual,
        "alpha": None if not math.isfinite(alpha) else alpha,
        "grid_file": "grid.csv",
        "model_label": spec.label,
        "int_G": None, "int_G_window": None, "int_xG": None,
        "sigma2": None, "C_D": None, "C_tail": None,
        "poisson_residual": None,
    }
    payload.update(_artifact_fields(args, h))
    if math.isfinite(alpha):
        pd = laplace.derive_poisson(grid, spec)
        _write_csv(out / "poisson.csv", meta, ["x", "D", "G"],
                   [pd.x, pd.D, pd.G])
        payload.update({
            "int_G": pd.int_G,
            "int_G_window": pd.int_G_window,
            "int_xG": pd.int_xG,
            "sigma2": pd.sigma2,
            "C_D": pd.C_D,
            "C_tail": pd.C_tail,
            "poisson_residual":
                float(np.max(np.abs(pd.residual)) / np.max(np.abs(pd.D))),
            "plateau_mean": pd.plateau_mean,
            "plateau_spread": pd.plateau_spread,
        })
        print(f"fixpoint: {grid.iterations} sweeps, residual "
              f"{grid.residual:.3g}; C_tail={pd.C_tail:.6g} "
              f"int_G={pd.int_G:.3g}")
    else:
        print(f"fixpoint: {grid.iterations} sweeps, residual "
              f"{grid.residual:.3g}; no tilt exponent, Poisson data "
              "skipped (model has no critical tangent point)")
    _write_json(out / "fixpoint.json", payload)
    return 0


def cmd_walk(args) -> int:
    spec, model_dict = _load_model(args.model)
    if args.budget < 100:
        raise ConfigError("/walk/budget", "need at least 100 paths")
    alpha = args.alpha
    if alpha is None:
        _, alpha = _detect_alpha(spec)
        if not math.isfinite(alpha):
            raise ConfigError(
                "/walk/alpha",
                "model has no critical tangent point; pass --alpha")
    try:
        law = tilted.tilted_law(spec, alpha, seed=args.seed)
    except NotNormalized as exc:
        raise ConfigError("/walk/alpha", str(exc)) from None
    delta = args.delta if args.delta is not None \
        else mellin.default_delta(alpha)
    if not delta > 0:
        raise ConfigError("/walk/delta", "delta must be positive")
    xs = _parse_x_grid(args.x_grid)
    cfg = _base_config(args, "walk", model_dict, {
        "alpha": alpha, "budget": args.budget, "delta": delta,
        "x_grid": [float(x) for x in xs],
    })
    h = config_hash(cfg)
    st = tilted.estimate_sigma2(law, n_paths=args.budget, seed=args.seed)
    w, se, tr = tilted.W_function(law, xs, delta, n_paths=args.budget,
                                  seed=args.seed, start_stream=args.budget)
    out = _out_dir(args)
    payload = {
        "alpha": alpha,
        "delta": delta,
        "tilted_mass": law.mass,
        "mean_Y": st.mean_Y,
        "sigma2_direct": st.sigma2_direct,
        "sigma2_ladder": st.sigma2_ladder,
        "se_ladder": st.se_ladder,
        "e_neg_SL": st.e_neg_SL,
        "se_neg_SL": st.se_neg_SL,
        "e_ST1": st.e_ST1,
        "se_ST1": st.se_ST1,
        "n_paths": st.n_paths,
        "censored_L": st.censored_L,
        "censored_T": st.censored_T,
        "w_truncated_fraction": float(np.max(np.atleast_1d(tr))),
        "model_label": spec.label,
    }
    payload.update(_artifact_fields(args, h))
    _write_json(out / "walk.json", payload)
    meta = _csv_meta(args, h, spec.label, {
        "alpha": f"{alpha:g}", "delta": f"{delta:g}",
        "budget": args.budget,
    })
    _write_csv(out / "walk.csv", meta, ["x", "W", "stderr"],
               [np.atleast_1d(xs), np.atleast_1d(w), np.atleast_1d(se)])
    print(f"walk.json: sigma2 direct={st.sigma2_direct:.6g} "
          f"ladder={st.sigma2_ladder:.6g} (se {st.se_ladder:.3g}); "
          f"walk.csv: {xs.size} W points")
    return 0


def _read_samples_csv(path: str):
    """Samples plus optional censoring columns from a samples CSV."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("/tail/samples",
                          f"cannot read {path!r}: {exc}") from None
    lines = [ln for ln in text.splitlines()
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ConfigError("/tail/samples", "no data rows")
    header = [c.strip() for c in lines[0].split(",")]
    try:
        [float(c) for c in header]
        has_header = False
    except ValueError:
        has_header = True
    data_lines = lines[1:] if has_header else lines
    try:
        arr = np.loadtxt([ln.encode() for ln in data_lines], delimiter=",",
                         dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ConfigError("/tail/samples",
                          f"bad numeric row: {exc}") from None
    cols = {name: arr[:, i] for i, name in enumerate(header)} \
        if has_header else {}
    samples = cols["r_value"] if "r_value" in cols else arr[:, 0]
    return samples, cols


def cmd_tail(args) -> int:
    window = _parse_window(args.window, "/tail/window")
    samples, cols = _read_samples_csv(args.samples)
    censored = None
    if "capped" in cols:
        censored = cols["capped"] > 0.5
        if args.weight_floor is None and "pruned_weight" in cols:
            # without a floor correction, prune losses above the censor
            # limit disqualify a sample from tail estimation
            censored = censored | (cols["pruned_weight"] > args.censor_limit)
    if args.weight_floor is not None and not 0.0 < args.weight_floor < 1.0:
        raise ConfigError("/tail/weight_floor", "must lie in (0, 1)")
    cfg = _base_config(args, "tail", None, {
        "samples_file": os.path.basename(args.samples),
        "alpha": args.alpha,
        "window": list(window),
        "with_log": bool(args.with_log),
        "weight_floor": args.weight_floor,
        "censor_limit": args.censor_limit,
    })
    h = config_hash(cfg)
    try:
        rep = tails.tail_report(samples, alpha=args.alpha, window=window,
                                with_log=args.with_log, censored=censored,
                                weight_floor=args.weight_floor)
    except WindowEmpty as exc:
        raise ConfigError("/tail/window", str(exc)) from None
    payload = {
        "n_samples": rep.n_samples,
        "censored_fraction": rep.censored_fraction,
        "unreliable": rep.unreliable,
        "hill": [{"k": k, "alpha_hat": a} for k, a in rep.hill],
        "slope_fit": {
            "alpha_hat": rep.slope_fit[0],
            "stderr": rep.slope_fit[1],
            "window": list(rep.slope_fit[2]),
        },
        "log_exponent": None if rep.log_exponent is None else {
            "theta_hat": rep.log_exponent[0],
            "stderr": rep.log_exponent[1],
        },
        "C_plus_hat": None if rep.C_plus_hat is None else {
            "value": rep.C_plus_hat[0],
            "stderr": rep.C_plus_hat[1],
            "alpha": args.alpha,
        },
        "design_cond": rep.design_cond,
        "weight_floor": args.weight_floor,
    }
    payload.update(_artifact_fields(args, h))
    out = _out_dir(args)
    _write_json(out / "tail.json", payload)
    a_hat, a_se, _ = rep.slope_fit
    print(f"tail.json: n={rep.n_samples} alpha_hat={a_hat:.4g} "
          f"(se {a_se:.3g}) censored={rep.censored_fraction:.3g}")
    return 0


def cmd_verify(args) -> int:
    spec, model_dict = _load_model(args.model)
    cfg = _base_config(args, "verify", model_dict, {"budget": args.budget})
    h = config_hash(cfg)

    def progress(res):
        mark = "SKIP" if res.skipped else ("PASS" if res.passed else "FAIL")
        print(f"[{mark}] {res.name} ({res.seconds:.1f}s)")
        if not res.passed and not res.skipped:
            print(f"       {res.detail}")

    rec = run_verify(spec, budget=args.budget, seed=args.seed,
                     workers=args.workers, cfg_hash=h, progress=progress)
    out = _out_dir(args)
    _write_json(out / "verify.json", rec.to_dict())
    n_skip = sum(1 for c in rec.checks if c.skipped)
    print(f"verify.json: {len(rec.checks)} checks, {rec.n_failed} failed, "
          f"{n_skip} skipped, wall {rec.wall_time:.1f}s")
    return 0 if rec.ok else 1


# ---------------------------------------------------------------------------
# parser

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0,
                   help="run seed (default 0)")
    p.add_argument("--workers", type=int,
                   default=int(os.environ.get("SMOOTHTAIL_WORKERS", "1")),
                   help="worker count recorded in artifacts "
                        "(SMOOTHTAIL_WORKERS overrides the default)")
    p.add_argument("--output-dir", default=".",
                   help="directory for artifacts (default .)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="smoothtail",
        description="Branching fixed points: simulation, Mellin analysis, "
                    "Laplace fixed point, tail estimation.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="Mellin roots, regime, assumptions")
    p.add_argument("--model", required=True, help="model spec JSON file")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="sample R on the weighted tree")
    p.add_argument("--model", required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--policy", default="1e-10,200,10000000",
                   help="pruning policy eps,depth,nodes "
                        "(default 1e-10,200,10000000)")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fixpoint", help="Laplace fixed point and Poisson "
                                        "equation data")
    p.add_argument("--model", required=True)
    p.add_argument("--alpha", type=float, default=None,
                   help="tilt exponent (default: tangent root when the "
                        "model is critical)")
    p.add_argument("--grid", default="1e-9,1e8,25",
                   help="t grid tmin,tmax,ppd (default 1e-9,1e8,25)")
    p.add_argument("--pool", type=int, default=100_000,
                   help="branch sample pool size (default 100000)")
    p.add_argument("--tol", type=float, default=None,
                   help="sup-norm update tolerance (default 1e-6 with a "
                        "tilt exponent, 1e-9 otherwise)")
    _add_common(p)
    p.set_defaults(func=cmd_fixpoint)

    p = sub.add_parser("walk", help="tilted walk: variance routes and W")
    p.add_argument("--model", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--budget", type=int, default=100_000,
                   help="paths per estimate (default 100000)")
    p.add_argument("--delta", type=float, default=None,
                   help="discount exponent (default from the moment margin)")
    p.add_argument("--x-grid", dest="x_grid", default="0,1,2,4,8,16",
                   help="comma-separated x values for W")
    _add_common(p)
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("tail", help="tail fits on a samples CSV")
    p.add_argument("--samples", required=True, help="samples CSV file")
    p.add_argument("--alpha", type=float, default=None,
                   help="exponent for the C_plus level estimate")
    p.add_argument("--window", default="1e2,1e4",
                   help="fit window lo,hi (default 1e2,1e4)")
    p.add_argument("--with-log", dest="with_log", action="store_true",
                   help="fit a log-correction exponent too")
    p.add_argument("--weight-floor", dest="weight_floor", type=float,
                   default=None,
                   help="pruning floor used to generate the samples; "
                        "enables the depletion correction")
    p.add_argument("--censor-limit", dest="censor_limit", type=float,
                   default=1e-6,
                   help="pruned-weight level above which a sample is "
                        "censored when no floor correction is active "
                        "(default 1e-6)")
    _add_common(p)
    p.set_defaults(func=cmd_tail)

    p = sub.add_parser("verify", help="ordered cross-module check suite")
    p.add_argument("--model", required=True)
    p.add_argument("--budget", choices=("small", "full"), default="small")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (NotNormalized, NoFiniteWindow) as exc:
        print(f"config error at /model: {exc}", file=sys.stderr)
        return 2
    except SmoothtailError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
