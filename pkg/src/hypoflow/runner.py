"""
Experiment runner: configuration handling, orchestration and file output.

The five subcommands ``eigen``, ``optimize``, ``evolve-fp``, ``evolve-kfp``
and ``check`` are available as functions (``cmd_*``) and through
:func:`main`, which takes an argument list.  ``python3 -m hypoflow`` calls
:func:`main` with ``sys.argv``.

Exit codes: 0 success, 1 a scientific check failed, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermeval

from . import __version__
from .entropy_core import PhiFamily, ScalarField, build_grid
from .fp_dynamics import (
    ImprovedDecayModel,
    MassDriftError,
    check_improved_eep,
    evolve_fp,
    exact_fp_oracle,
    fit_decay_rate,
    integrate_improved_ode,
)
from .hypo_algebra import eigenvalues_m2_closed_form, eigenvalues_numeric, build_matrices, HypoParams, optimize_lambda_star
from .inequality_suite import SUITES, TestFieldGenerator, run_suite
from .kfp_dynamics import (
    PhaseField,
    PositivityError,
    estimate_tau,
    evolve_kfp,
    exact_kfp_oracle,
    rho_statistics,
    v_independent_datum,
)

__all__ = [
    "EXIT_OK",
    "EXIT_CHECK_FAILED",
    "EXIT_USAGE",
    "UsageError",
    "DEFAULTS",
    "resolve_config",
    "config_hash",
    "cmd_eigen",
    "cmd_optimize",
    "cmd_evolve_fp",
    "cmd_evolve_kfp",
    "cmd_check",
    "main",
]

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2
FLOAT_FORMAT = "%.17g"
DEFAULT_P_LIST = [1.0, 1.25, 1.5, 1.75, 2.0]


class UsageError(ValueError):
    """Bad arguments or configuration; maps to exit code 2."""


DEFAULTS: dict[str, dict[str, Any]] = {
    "eigen": {"kappa_min": 0.0, "kappa_max": 8.0, "step": 0.0625},
    "optimize": {"kappa": 0.0},
    "evolve-fp": {
        "grid": {"L": 8.0, "n": 513, "stencil_order": 4},
        "dt": 1e-3,
        "T": 5.0,
        "sample_every": 10,
        "p_list": [2.0],
        "fit_window": [2.0, 5.0],
        "initial": {"kind": "shifted_gaussian", "params": {}},
    },
    "evolve-kfp": {
        "grid": {"L": 8.0, "n": 129, "stencil_order": 4},
        "v_axis": {"L": 8.0, "n": 129},
        "dt": 2e-3,
        "T": 8.0,
        "sample_every": 5,
        "p_list": [2.0],
        "fit_window": [3.0, 8.0],
        "initial": {"kind": "decentred", "x0": 1.0, "v0": 0.0},
        "controller": {"enabled": False, "nu_choice": 1.0, "a_star_fraction": 0.1},
    },
    "check": {"suites": sorted(SUITES), "seeds": 200, "p_list": DEFAULT_P_LIST},
}

FP_INITIAL_PARAMS = {
    "shifted_gaussian": {"x0": 1.0},
    "hermite_perturbation": {"k": 2, "eps": 0.1},
    "random_mixture": {"components": 3},
}
KFP_INITIAL_KINDS = ("decentred", "v_independent", "random")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    if not isinstance(user, dict):
        raise UsageError(f"config entry {path or '<root>'} must be an object")
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        if key not in defaults:
            raise UsageError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict) and key != "params":
            out[key] = _merge(defaults[key], val, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _number(value: Any, name: str, lo: float = -math.inf, hi: float = math.inf, integer: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise UsageError(f"{name} must be a number")
    if integer and int(value) != value:
        raise UsageError(f"{name} must be an integer")
    if not math.isfinite(value) or not lo <= value <= hi:
        raise UsageError(f"{name}={value} outside [{lo}, {hi}]")
    return int(value) if integer else float(value)


def _p_list(values: Any) -> list[float]:
    if not isinstance(values, list) or not values:
        raise UsageError("p_list must be a nonempty list")
    ps = sorted({_number(v, "p", 1.0, 2.0) for v in values})
    return ps


def _window(value: Any) -> Optional[list[float]]:
    if value is None:
        return None
    if not isinstance(value, list) or len(value) != 2:
        raise UsageError("fit_window must be [t0, t1] or null")
    t0, t1 = (_number(v, "fit_window", 0.0) for v in value)
    if t1 <= t0:
        raise UsageError("fit_window must satisfy t0 < t1")
    return [t0, t1]


def resolve_config(command: str, user: Optional[dict] = None, p_override: Optional[list[float]] = None) -> dict:
    """
    Merge a user document over the defaults of ``command`` and validate it.

    Raises
    ------
    UsageError
        On unknown keys, wrong types or out-of-range values.
    """
    if command not in DEFAULTS:
        raise UsageError(f"unknown command {command!r}")
    cfg = _merge(DEFAULTS[command], user or {})
    if p_override is not None and "p_list" in cfg:
        cfg["p_list"] = p_override
    if command == "eigen":
        for k in ("kappa_min", "kappa_max"):
            cfg[k] = _number(cfg[k], k, 0.0, 8.0)
        cfg["step"] = _number(cfg["step"], "step", 0.0)
        if cfg["step"] == 0.0:
            raise UsageError("step must be positive")
        if cfg["kappa_max"] < cfg["kappa_min"]:
            raise UsageError("empty kappa range")
    elif command == "optimize":
        cfg["kappa"] = _number(cfg["kappa"], "kappa", 0.0, 8.0)
    elif command in ("evolve-fp", "evolve-kfp"):
        g = cfg["grid"]
        g["L"] = _number(g["L"], "grid.L", 1.0)
        g["n"] = _number(g["n"], "grid.n", 9, 4097, integer=True)
        g["stencil_order"] = _number(g["stencil_order"], "grid.stencil_order", 2, 4, integer=True)
        if g["stencil_order"] not in (2, 4):
            raise UsageError("grid.stencil_order must be 2 or 4")
        cfg["dt"] = _number(cfg["dt"], "dt", 0.0, 0.01 if command == "evolve-fp" else 0.1)
        cfg["T"] = _number(cfg["T"], "T", 0.0, 50.0)
        if cfg["dt"] == 0.0 or cfg["T"] == 0.0:
            raise UsageError("dt and T must be positive")
        cfg["sample_every"] = _number(cfg["sample_every"], "sample_every", 1, 10**7, integer=True)
        cfg["p_list"] = _p_list(cfg["p_list"])
        cfg["fit_window"] = _window(cfg["fit_window"])
        init = cfg["initial"]
        if command == "evolve-fp":
            kind = init.get("kind")
            if kind not in FP_INITIAL_PARAMS:
                raise UsageError(f"initial.kind must be one of {sorted(FP_INITIAL_PARAMS)}")
            init["params"] = _merge(FP_INITIAL_PARAMS[kind], init.get("params") or {}, "initial.params.")
            for k, v in init["params"].items():
                init["params"][k] = _number(v, f"initial.params.{k}", integer=(k in ("k", "components")))
        else:
            if init.get("kind") not in KFP_INITIAL_KINDS:
                raise UsageError(f"initial.kind must be one of {list(KFP_INITIAL_KINDS)}")
            init["x0"] = _number(init["x0"], "initial.x0")
            init["v0"] = _number(init["v0"], "initial.v0")
            va = cfg["v_axis"]
            if _number(va["L"], "v_axis.L") != g["L"] or _number(va["n"], "v_axis.n", integer=True) != g["n"]:
                raise UsageError("v_axis must match grid (square phase-space grid)")
            ctl = cfg["controller"]
            if not isinstance(ctl["enabled"], bool):
                raise UsageError("controller.enabled must be true or false")
            ctl["nu_choice"] = _number(ctl["nu_choice"], "controller.nu_choice", 0.0, 1.0 + math.sqrt(3.0) / 2.0)
            ctl["a_star_fraction"] = _number(ctl["a_star_fraction"], "controller.a_star_fraction", 0.0, 1.0)
    elif command == "check":
        suites = cfg["suites"]
        if not isinstance(suites, list) or not suites or any(s not in SUITES for s in suites):
            raise UsageError(f"suites must be a nonempty subset of {sorted(SUITES)}")
        cfg["suites"] = sorted(set(suites))
        cfg["seeds"] = _number(cfg["seeds"], "seeds", 1, 10**6, integer=True)
        cfg["p_list"] = _p_list(cfg["p_list"])
    return cfg


def config_hash(document: dict) -> str:
    """SHA-256 of the canonical JSON form of ``document``."""
    blob = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return FLOAT_FORMAT % float(x)
    return str(x)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {(_fmt(k) if not isinstance(k, str) else k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


class _Output:
    """Writes files that carry the version and the resolved-config hash."""

    def __init__(self, out_dir: Path, command: str, cfg: dict, seed: int):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.document = {"command": command, "seed": seed, "config": cfg}
        self.hash = config_hash(self.document)
        self.meta = {"version": __version__, "config_sha256": self.hash}
        self.files: list[Path] = []
        self.json("config.resolved.json", self.document)

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            fh.write(f"# hypoflow {__version__} config_sha256={self.hash}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
        self.files.append(path)
        return path

    def json(self, name: str, payload: dict) -> Path:
        path = self.dir / name
        doc = dict(_jsonable(payload))
        doc["meta"] = self.meta
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        self.files.append(path)
        return path

    def text(self, name: str, body: str) -> Path:
        path = self.dir / name
        path.write_text(f"# hypoflow {__version__} config_sha256={self.hash}\n{body}")
        self.files.append(path)
        return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


GNUPLOT_EIGEN = """set datafile separator ','
set datafile commentschars '#'
set key top left
set xlabel 'kappa'
set ylabel 'eigenvalues of M2(1/2, 1)'
set xrange [{kmin}:{kmax}]
set grid
plot '{csv}' using 1:2 with lines lw 2 title columnheader(2), \\
     '' using 1:3 with lines lw 2 title columnheader(3), \\
     '' using 1:4 with lines lw 2 title columnheader(4), \\
     '' using 1:5 with lines lw 2 title columnheader(5)
"""


def cmd_eigen(cfg: dict, out: _Output) -> tuple[int, dict]:
    """Closed-form eigenvalue sweep of ``M2(1/2, 1, kappa)`` with a numeric cross-check."""
    kmin, kmax, step = cfg["kappa_min"], cfg["kappa_max"], cfg["step"]
    n = int(math.floor((kmax - kmin) / step + 1e-9)) + 1
    rows, worst_gap, lowest = [], 0.0, math.inf
    for i in range(n):
        kappa = kmin + i * step
        closed = eigenvalues_m2_closed_form(kappa)
        numeric = eigenvalues_numeric(build_matrices(HypoParams(0.5, 1.0, kappa)).m2)
        gap = float(np.max(np.abs(np.sort(list(closed.values())) - numeric)))
        worst_gap = max(worst_gap, gap)
        lowest = min(lowest, float(numeric.min()))
        rows.append([kappa, closed["l1"], closed["l2"], closed["l3"], closed["l4"]])
    out.csv("eigen.csv", ["kappa", "l1", "l2", "l3", "l4"], rows)
    out.text("eigen.gp", GNUPLOT_EIGEN.format(kmin=_fmt(kmin), kmax=_fmt(kmax), csv="eigen.csv"))
    ok = worst_gap <= 1e-10 and lowest >= -1e-12
    summary = {"rows": n, "max_closed_vs_numeric": worst_gap, "min_numeric_eigenvalue": lowest, "ok": ok}
    out.json("eigen.json", summary)
    return (EXIT_OK if ok else EXIT_CHECK_FAILED), summary


def cmd_optimize(cfg: dict, out: _Output) -> tuple[int, dict]:
    """Maximise the rate over the feasible ``(lambda, nu)`` set."""
    res = optimize_lambda_star(cfg["kappa"])
    summary = {"kappa": cfg["kappa"], "lambda_opt": res.lambda_opt, "nu_opt": res.nu_opt, "value": res.value}
    out.json("optimize.json", summary)
    return EXIT_OK, summary


def _fp_initial(cfg: dict, seed: int):
    grid = build_grid(1, cfg["grid"]["L"], cfg["grid"]["n"], cfg["grid"]["stencil_order"])
    init = cfg["initial"]
    prm = init["params"]
    if init["kind"] == "shifted_gaussian":
        try:
            return exact_fp_oracle(prm["x0"], 0.0, grid)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    if init["kind"] == "hermite_perturbation":
        if prm["k"] < 1:
            raise UsageError("initial.params.k must be at least 1")
        coeffs = np.zeros(prm["k"] + 1)
        coeffs[-1] = 1.0
        w = ScalarField.from_function(grid, lambda x: 1.0 + prm["eps"] * hermeval(x, coeffs))
        if w.values.min() < 0:
            raise UsageError("hermite_perturbation datum is negative on the grid; reduce eps")
        return w
    if prm["components"] < 1:
        raise UsageError("initial.params.components must be positive")
    return TestFieldGenerator(seed, "positive_mixture").field(grid, normalize=True)


def cmd_evolve_fp(cfg: dict, out: _Output, seed: int = 0) -> tuple[int, dict]:
    """Ornstein-Uhlenbeck run with entropy, Fisher and improved-inequality diagnostics."""
    w0 = _fp_initial(cfg, seed)
    try:
        trace = evolve_fp(w0, cfg["T"], cfg["dt"], cfg["p_list"], cfg["sample_every"])
    except MassDriftError as exc:
        summary = {"ok": False, "error": str(exc)}
        out.json("fp_summary.json", summary)
        return EXIT_CHECK_FAILED, summary
    t = trace.times
    rows = []
    eep: dict[float, dict] = {}
    for p in trace.p_list:
        fam = PhiFamily(p)
        bound = 2.0 * ImprovedDecayModel(fam).F(np.maximum(trace.entropy[p], 0.0))
        for k in range(t.size):
            rows.append([t[k], p, trace.entropy[p][k], trace.fisher[p][k], bound[k], trace.ck_bound[p][k]])
        if 1.0 < p < 2.0 and t.size >= 3:
            rep = check_improved_eep(trace, fam)
            # round-off can leave a stationary datum with E slightly below zero
            e0 = max(float(trace.entropy[p][0]), 0.0)
            env_t, env = integrate_improved_ode(e0, fam, float(t[-1]), min(trace.dt, 1e-3))
            env_margin = float(np.min(np.interp(t, env_t, env) - trace.entropy[p]))
            eep[p] = {
                "gap_margin": rep.gap_margin,
                "ode_margin": rep.ode_margin,
                "envelope_margin": env_margin,
                "ok": rep.ok(1e-6) and env_margin >= -1e-6,
            }
    rows.sort(key=lambda r: (r[1], r[0]))
    out.csv("fp_trace.csv", ["t", "p", "entropy", "fisher", "improved_bound", "ck_bound"], rows)
    rates: dict[float, Optional[float]] = {}
    if cfg["fit_window"] is not None:
        for p in trace.p_list:
            try:
                rates[p] = fit_decay_rate(t, trace.entropy[p], tuple(cfg["fit_window"]))
            except ValueError:
                rates[p] = None
    ok = trace.monotone and trace.identity_ok and all(e["ok"] for e in eep.values())
    summary = {
        "fitted_rate": rates,
        "fit_window": cfg["fit_window"],
        "identity_residual": trace.identity_residual,
        "identity_budget": trace.identity_budget,
        "monotone": trace.monotone,
        "mass_drift": trace.mass_drift,
        "improved_eep": eep,
        "ok": ok,
    }
    out.json("fp_summary.json", summary)
    return (EXIT_OK if ok else EXIT_CHECK_FAILED), summary


def _kfp_initial(cfg: dict, seed: int) -> PhaseField:
    grid = build_grid(2, cfg["grid"]["L"], cfg["grid"]["n"], cfg["grid"]["stencil_order"])
    init = cfg["initial"]
    try:
        if init["kind"] == "decentred":
            return exact_kfp_oracle(init["x0"], init["v0"], 0.0, grid)
        if init["kind"] == "v_independent":
            return v_independent_datum(grid, init["x0"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    w = TestFieldGenerator(seed, "positive_mixture").field(grid, normalize=True)
    return PhaseField(grid, w.values)


def cmd_evolve_kfp(cfg: dict, out: _Output, seed: int = 0) -> tuple[int, dict]:
    """Kinetic run with twisted Fisher diagnostics and the optional rate controller."""
    g0 = _kfp_initial(cfg, seed)
    fams = [PhiFamily(p) for p in cfg["p_list"]]
    ctl = cfg["controller"]
    try:
        trace = evolve_kfp(
            g0,
            cfg["T"],
            cfg["dt"],
            fams,
            controller_on=ctl["enabled"],
            sample_every=cfg["sample_every"],
            nu_choice=ctl["nu_choice"],
            a_star_fraction=ctl["a_star_fraction"],
        )
    except (MassDriftError, PositivityError) as exc:
        summary = {"ok": False, "error": str(exc)}
        out.json("kfp_summary.json", summary)
        return EXIT_CHECK_FAILED, summary
    t = trace.times
    rows = []
    per_p: dict[float, dict] = {}
    ok = True
    for p in trace.p_list:
        diags = trace.channels[p]
        ctrl = trace.controller.get(p)
        for k, d in enumerate(diags):
            lam = ctrl["lambda_t"][k] if ctrl else 0.5
            rho = ctrl["rho_t"][k] if ctrl else math.nan
            tau = ctrl["tau_partial"][k] if ctrl else math.nan
            j_lam = d.J_lambda if d.J_lambda is not None else d.J_expanded
            rows.append([d.t, p, d.entropy, d.J, j_lam, lam, rho, d.a, d.b, d.c, d.j, tau])
        a, b, c = trace.series(p, "a"), trace.series(p, "b"), trace.series(p, "c")
        cs = float(np.max(b * b - a * c))
        djdt = trace.dj_dt_fd(p) if t.size >= 3 else np.zeros(0)
        dj_max = float(djdt.max()) if djdt.size else 0.0
        ident = trace.series(p, "dj_dt_identity")
        J = trace.series(p, "J")
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = trace.log_slope(p) if np.all(J > 0) and t.size >= 3 else np.zeros(0)
        entry: dict[str, Any] = {
            "a_initial": float(a[0]),
            "a_first_sample": float(a[1]) if a.size > 1 else None,
            "j_initial": float(trace.series(p, "j")[0]),
            "max_b2_minus_ac": cs,
            "max_dj_dt_fd": dj_max,
            "max_dj_dt_identity": float(np.max(ident)),
            "max_J_log_slope": float(slope.max()) if slope.size else None,
            "fitted_rate": None,
        }
        if cfg["fit_window"] is not None:
            try:
                entry["fitted_rate"] = trace.fitted_rate(p, tuple(cfg["fit_window"]))
            except ValueError:
                pass
        if ctrl:
            tau = estimate_tau(t, ctrl["rho_t"])
            stats = rho_statistics(t, ctrl["rho_t"])
            branches, counts = np.unique(ctrl["branch"], return_counts=True)
            entry["controller"] = {
                **stats,
                "tau": tau.value,
                "tau_converged": tau.converged,
                "lambda_end": float(ctrl["lambda_t"][-1]),
                "zero_events": trace.zero_events[p],
                "branch_counts": {str(bn): int(cn) for bn, cn in zip(branches, counts)},
            }
        entry["ok"] = cs <= 1e-10 and dj_max <= 1e-8
        ok = ok and entry["ok"]
        per_p[p] = entry
    rows.sort(key=lambda r: (r[1], r[0]))
    header = ["t", "p", "entropy", "J_half", "J_lambda", "lambda_t", "rho_t", "a", "b", "c", "j", "tau_partial"]
    out.csv("kfp_trace.csv", header, rows)
    summary = {
        "channels": per_p,
        "mass_drift": trace.mass_drift,
        "clamped_mass": trace.clamped_mass,
        "clamp_defect": trace.clamp_defect,
        "ok": ok,
    }
    out.json("kfp_summary.json", summary)
    return (EXIT_OK if ok else EXIT_CHECK_FAILED), summary


def cmd_check(cfg: dict, out: _Output, seed: int = 0, flip: bool = False) -> tuple[int, dict]:
    """Sampled inequality suite; exit 0 exactly when no check is violated."""
    reports = run_suite(cfg["suites"], cfg["seeds"], cfg["p_list"], flip=flip, first_seed=seed)
    total = sum(r.violations for r in reports)
    out.csv(
        "check.csv",
        ["check", "p_or_q", "seeds", "min_margin", "argmin_seed", "violations"],
        [[r.check, r.p_or_q, r.seeds, r.min_margin, r.argmin_seed, r.violations] for r in reports],
    )
    summary = {"reports": [r.as_dict() for r in reports], "violations": total, "flipped": flip}
    out.json("check.json", summary)
    return (EXIT_OK if total == 0 else EXIT_CHECK_FAILED), summary


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors exit with 2
        raise UsageError(message)


def _parse_p(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad p list {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration document")
    common.add_argument("--out", type=Path, default=Path("hypoflow-out"), help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--quiet", action="store_true")
    with_p = argparse.ArgumentParser(add_help=False)
    with_p.add_argument("--p", type=_parse_p, help="comma-separated p values")

    parser = _Parser(prog="hypoflow")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    e = sub.add_parser("eigen", parents=[common])
    e.add_argument("--kappa-min", type=float)
    e.add_argument("--kappa-max", type=float)
    e.add_argument("--step", type=float)
    o = sub.add_parser("optimize", parents=[common])
    o.add_argument("--kappa", type=float)
    sub.add_parser("evolve-fp", parents=[common, with_p])
    sub.add_parser("evolve-kfp", parents=[common, with_p])
    c = sub.add_parser("check", parents=[common, with_p])
    c.add_argument("suite", nargs="*", help=f"any of {sorted(SUITES)}; default all")
    c.add_argument("--seeds", type=int)
    c.add_argument("--self-test-flip", action="store_true", help=argparse.SUPPRESS)
    return parser


def _load_config(path: Optional[Path]) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed config: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    return doc


def _check_threads() -> None:
    env = os.environ.get("HYPOFLOW_THREADS")
    if env is not None:
        try:
            if int(env) < 1:
                raise ValueError
        except ValueError:
            raise UsageError("HYPOFLOW_THREADS must be a positive integer") from None


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand and return its exit code.

    Parameters
    ----------
    argv : sequence of str, optional
        Arguments without the program name; defaults to ``sys.argv[1:]``.
    """
    try:
        args = _build_parser().parse_args(argv)
        _check_threads()
        user = _load_config(args.config)
        if args.command == "eigen":
            for key in ("kappa_min", "kappa_max", "step"):
                if getattr(args, key) is not None:
                    user[key] = getattr(args, key)
        elif args.command == "optimize" and args.kappa is not None:
            user["kappa"] = args.kappa
        elif args.command == "check":
            if args.suite:
                user["suites"] = list(args.suite)
            if args.seeds is not None:
                user["seeds"] = args.seeds
        cfg = resolve_config(args.command, user, getattr(args, "p", None))
        out = _Output(args.out, args.command, cfg, args.seed)
        if args.command == "eigen":
            code, summary = cmd_eigen(cfg, out)
        elif args.command == "optimize":
            code, summary = cmd_optimize(cfg, out)
        elif args.command == "evolve-fp":
            code, summary = cmd_evolve_fp(cfg, out, args.seed)
        elif args.command == "evolve-kfp":
            code, summary = cmd_evolve_kfp(cfg, out, args.seed)
        else:
            code, summary = cmd_check(cfg, out, args.seed, args.self_test_flip)
    except UsageError as exc:
        print(f"hypoflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not args.quiet:
        print(json.dumps({"command": args.command, "exit": code, "out": str(args.out)}))
    return code
