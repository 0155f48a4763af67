"""Command line entry point: validate, certify, simulate, reproduce.

Configs are JSON files carrying ``schema_version``.  Reports are written with
17 significant digits so identical inputs give byte-identical output.

Exit codes: 0 success, 1 infeasible or golden mismatch, 2 invalid input,
3 monitor violation.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import expr as _expr
from .certify import (
    Certificate,
    CumulativeProfile,
    SwitchingSchedule,
    certify,
    lambda_bound,
    lhs,
    switched_condition,
    switched_min_rho,
    xi_profile,
)
from .lyapunov import (
    THREADS_ENV,
    ConstantsBundle,
    LyapunovError,
    constants_formula,
    constants_spectral,
    estimate_c,
    worker_count,
)
from .perturbation import ModelInconsistencyError, PerturbationModel
from .spectral import ShiftedTrajectory
from .simulate import SimulationBlowUp, integrate, monitor_W, verify_iss, write_csv
from .trajectory import MatrixTrajectory, TrajectoryError, check_regularity

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INFEASIBLE, EXIT_INVALID, EXIT_MONITOR = 0, 1, 2, 3
EXAMPLES = ("paper-sec5", "remark-counterexample", "switched-demo")
GOLDEN_TOL = 1e-3


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ----------------------------------------------------------------------
# Config
# ----------------------------------------------------------------------


def _number(value, path: str) -> float:
    """A number, or a constant expression that may use ``pi``."""
    if isinstance(value, bool):
        raise ConfigError(path, "expected a number")
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        try:
            out = float(_expr.evaluate(_expr.parse(value, ("pi",)), 0.0, pi=math.pi))
        except _expr.ExpressionError as exc:
            raise ConfigError(path, str(exc)) from None
    else:
        raise ConfigError(path, "expected a number or constant expression")
    if not math.isfinite(out):
        raise ConfigError(path, "must be finite")
    return out


def _opt_number(section: dict, key: str, path: str) -> Optional[float]:
    v = section.get(key)
    return None if v is None else _number(v, f"{path}.{key}")


def _section(cfg: dict, key: str) -> dict:
    v = cfg.get(key, {})
    if v is None:
        return {}
    if not isinstance(v, dict):
        raise ConfigError(key, "expected an object")
    return v


@dataclass
class SystemConfig:
    name: str
    traj: MatrixTrajectory
    pert: PerturbationModel
    kappa: Optional[float]
    beta: Optional[float] = None
    constants_mode: str = "spectral"
    lam: Optional[float] = None
    rho: Optional[float] = None
    grid_per_period: int = 512
    horizon: Optional[float] = None
    simulation: dict = field(default_factory=dict)
    switched: Optional[dict] = None
    golden: dict = field(default_factory=dict)


def _parse_switched(sw: dict, n: int):
    path = "switched"
    modes = sw.get("modes")
    if not isinstance(modes, list) or len(modes) < 1:
        raise ConfigError(f"{path}.modes", "expected a list of matrices")
    mats = []
    for i, m in enumerate(modes):
        try:
            arr = np.array([[_number(v, f"{path}.modes[{i}]") for v in row] for row in m])
        except TypeError:
            raise ConfigError(f"{path}.modes[{i}]", "expected a matrix") from None
        if arr.shape != (n, n):
            raise ConfigError(f"{path}.modes[{i}]", f"expected shape ({n}, {n})")
        mats.append(arr)
    times = [_number(v, f"{path}.times[{k}]") for k, v in enumerate(sw.get("times", []))]
    seq = sw.get("sequence", [])
    if any(not isinstance(s, int) or not 0 <= s < len(mats) for s in seq):
        raise ConfigError(f"{path}.sequence", "mode indices out of range")
    try:
        sched = SwitchingSchedule(tuple(times), tuple(seq),
                                  period=times[-1] if sw.get("periodic", True) and times else None)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None
    for key in ("kappa_s", "kappa_u"):
        if key not in sw:
            raise ConfigError(f"{path}.{key}", "required")
    return {"modes": mats, "schedule": sched,
            "kappa_s": _number(sw["kappa_s"], f"{path}.kappa_s"),
            "kappa_u": _number(sw["kappa_u"], f"{path}.kappa_u")}


def load_config(source: Any, name: str = "config") -> SystemConfig:
    """Build a SystemConfig from a parsed JSON object; errors carry the field path."""
    if not isinstance(source, dict):
        raise ConfigError("$", "top level must be an object")
    version = source.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    n = source.get("dimension")
    if not isinstance(n, int) or n < 1:
        raise ConfigError("dimension", "expected a positive integer")

    sw = source.get("switched")
    segs = source.get("segments")
    switched = _parse_switched(sw, n) if sw is not None else None
    if segs is None and switched is not None:
        traj = switched["schedule"].to_trajectory(switched["modes"])
    else:
        if not isinstance(segs, list) or not segs:
            raise ConfigError("segments", "expected a non-empty list")
        boundaries, entries = [], []
        for k, seg in enumerate(segs):
            p = f"segments[{k}]"
            if not isinstance(seg, dict):
                raise ConfigError(p, "expected an object")
            start = _number(seg.get("start"), f"{p}.start")
            end = _number(seg.get("end"), f"{p}.end")
            if k == 0:
                boundaries.append(start)
            elif start != boundaries[-1]:
                rel = "overlaps" if start < boundaries[-1] else "leaves a gap after"
                raise ConfigError(f"{p}.start", f"segment {rel} the previous one (start {start}, "
                                                f"previous end {boundaries[-1]})")
            if not end > start:
                raise ConfigError(f"{p}.end", "must exceed start")
            boundaries.append(end)
            rows = seg.get("entries")
            if (not isinstance(rows, list) or len(rows) != n
                    or any(not isinstance(r, list) or len(r) != n for r in rows)):
                raise ConfigError(f"{p}.entries", f"expected a {n}x{n} list of expressions")
            parsed = []
            for i, row in enumerate(rows):
                out_row = []
                for j, e in enumerate(row):
                    try:
                        out_row.append(_expr.parse(str(e)))
                    except _expr.ExpressionError as exc:
                        raise ConfigError(f"{p}.entries[{i}][{j}]", str(exc)) from None
                parsed.append(out_row)
            entries.append(parsed)
        period = source.get("period")
        period = None if period is None else _number(period, "period")
        try:
            traj = MatrixTrajectory.from_entries(boundaries, entries, period=period)
        except (TrajectoryError, ValueError) as exc:
            raise ConfigError("segments", str(exc)) from None

    ps = _section(source, "perturbation")
    g = ps.get("g")
    if g is not None and (not isinstance(g, list) or len(g) != n):
        raise ConfigError("perturbation.g", f"expected {n} expressions")
    try:
        pert = PerturbationModel.build(str(ps.get("gamma", "0")), str(ps.get("delta", "0")),
                                       None if g is None else [str(s) for s in g])
    except _expr.ExpressionError as exc:
        raise ConfigError("perturbation", str(exc)) from None

    an = _section(source, "analysis")
    mode = an.get("constants_mode", "spectral")
    if mode not in ("spectral", "formula"):
        raise ConfigError("analysis.constants_mode", "expected 'spectral' or 'formula'")
    grid = an.get("grid_per_period", 512)
    if not isinstance(grid, int) or grid < 8:
        raise ConfigError("analysis.grid_per_period", "expected an integer >= 8")
    golden = source.get("golden", {})
    if not isinstance(golden, dict):
        raise ConfigError("golden", "expected an object")
    return SystemConfig(
        name=str(source.get("name", name)),
        traj=traj,
        pert=pert,
        kappa=_opt_number(an, "kappa", "analysis"),
        beta=_opt_number(an, "beta", "analysis"),
        constants_mode=mode,
        lam=_opt_number(an, "lambda", "analysis"),
        rho=_opt_number(an, "rho", "analysis"),
        grid_per_period=grid,
        horizon=_opt_number(an, "horizon", "analysis"),
        simulation=_section(source, "simulation"),
        switched=switched,
        golden=golden,
    )


def read_config(path: str) -> SystemConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror or str(exc)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None
    return load_config(data, Path(path).stem)


def bundled_config(example_id: str) -> SystemConfig:
    if example_id not in EXAMPLES:
        raise ConfigError("example_id", f"unknown example {example_id!r}; choose from {', '.join(EXAMPLES)}")
    text = resources.files("ltvcert").joinpath("data", f"{example_id}.json").read_text()
    return load_config(json.loads(text), example_id)


# ----------------------------------------------------------------------
# Deterministic JSON
# ----------------------------------------------------------------------


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{_encode(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    return _encode(obj, indent, 0) + "\n"


def _emit(report: dict, out_path: Optional[str]) -> None:
    text = dumps(report)
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)


# ----------------------------------------------------------------------
# Pipeline pieces
# ----------------------------------------------------------------------


def _require_kappa(cfg: SystemConfig, override: Optional[float]) -> float:
    kappa = override if override is not None else cfg.kappa
    if kappa is None:
        raise ConfigError("analysis.kappa", "kappa is required (config or --kappa)")
    if not kappa > 0:
        raise ConfigError("analysis.kappa", "must be positive")
    return kappa


def build_constants(cfg: SystemConfig, kappa: float, mode: str, regularity=None) -> ConstantsBundle:
    if mode == "spectral":
        return constants_spectral(cfg.traj, kappa)
    beta = cfg.beta if cfg.beta is not None else kappa / 2
    reg = regularity or check_regularity(cfg.traj)
    c = estimate_c(cfg.traj, kappa, beta)
    return constants_formula(reg.L, reg.alpha_max, kappa, beta, c)


def run_certify(cfg: SystemConfig, kappa: Optional[float] = None, lam: Optional[float] = None,
                rho: Optional[float] = None, mode: Optional[str] = None):
    """Full pipeline; returns (report dict, Certificate, profile, constants)."""
    kappa = _require_kappa(cfg, kappa)
    mode = mode or cfg.constants_mode
    lam = lam if lam is not None else cfg.lam
    rho = rho if rho is not None else cfg.rho
    reg = check_regularity(cfg.traj)
    if reg.assumption24_suspect:
        raise ConfigError("segments", "abscissa of A(t) does not look absolutely continuous; "
                                      "certification preconditions fail")
    constants = build_constants(cfg, kappa, mode, reg)
    profile = CumulativeProfile(cfg.traj, cfg.pert, kappa)
    if lam is not None and not lam < lambda_bound(constants):
        raise ConfigError("analysis.lambda", f"must be below c1/(2 c2) = {lambda_bound(constants)}")
    cert = certify(cfg.traj, cfg.pert, kappa, constants, lam=lam, horizon=cfg.horizon, rho=rho,
                   per_base=cfg.grid_per_period, profile=profile)
    d = cert.as_dict()
    ref = d["reference_window"]
    report = {
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name,
        "feasible": cert.feasible,
        "int_phi": ref["int_phi"],
        "int_gamma": ref["int_gamma"],
        "tv_tilde": ref["tv_tilde"],
        "lhs": ref["lhs"],
        "rhs": ref["rhs"],
        "settings": {
            "kappa": kappa,
            "beta": constants.beta if mode == "formula" else (cfg.beta if cfg.beta is not None else kappa / 2),
            "constants_mode": mode,
            "lambda": lam,
            "rho": rho,
            "grid_per_period": cfg.grid_per_period,
            "epsilon": "midpoint of (0, c1/c2 - 2 lambda)",
        },
        "regularity": reg.as_dict(),
        "certificate": d,
    }
    return report, cert, profile, constants


def certificate_from_report(report: dict) -> Certificate:
    """Rebuild a Certificate from a certify report (or its ``certificate`` block)."""
    d = report.get("certificate", report)
    try:
        k = d["constants"]
        constants = ConstantsBundle(k["c1"], k["c2"], k["kappa"], k["mode"], k.get("c"), k.get("beta"))
        iss = d["iss"]
        w = d["worst_window"]
        return Certificate(
            feasible=bool(d["feasible"]), kappa=d["kappa"], lam=d["lambda"],
            rho=d["rho"] if d["rho"] is not None else math.inf, epsilon=d["epsilon"],
            constants=constants, horizon=tuple(x if x is not None else math.inf for x in d["horizon"]),
            periodic=d["periodic"], lhs_worst_window=(w["t_a"], w["t_b"], w["lhs"], w["rhs"]),
            reference=d["reference_window"], a=iss["a"], b=iss["b"], k1=iss["k1"], k2=iss["k2"],
            k3=iss["k3"], k3_unscaled=iss.get("k3_unscaled"), notes=list(d.get("notes", [])),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError("certificate", f"malformed certificate report ({exc})") from None


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------


def cmd_validate(args) -> int:
    cfg = read_config(args.config)
    reg = check_regularity(cfg.traj)
    report = {"schema_version": SCHEMA_VERSION, "name": cfg.name, "regularity": reg.as_dict()}
    _emit(report, args.json)
    print(f"L = {reg.L:.6g}", file=sys.stderr)
    print(f"alpha_max = {reg.alpha_max:.6g}", file=sys.stderr)
    print(f"jumps per window = {reg.jump_count_per_window}", file=sys.stderr)
    if reg.assumption24_suspect:
        print("assumption24_suspect: abscissa may not be absolutely continuous", file=sys.stderr)
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = read_config(args.config)
    report, cert, _, _ = run_certify(cfg, args.kappa, args.lam, args.rho, args.mode)
    _emit(report, args.json)
    verdict = "feasible" if cert.feasible else "infeasible"
    print(f"{verdict}: lhs={report['lhs']:.6g} rhs={report['rhs']:.6g} lambda={cert.lam:.6g} "
          f"rho={cert.rho:.6g}", file=sys.stderr)
    return EXIT_OK if cert.feasible else EXIT_INFEASIBLE


def _sim_setting(cfg: SystemConfig, flag, key: str, default=None):
    if flag is not None:
        return flag
    v = cfg.simulation.get(key, default)
    if v is None:
        raise ConfigError(f"simulation.{key}", "required (config or flag)")
    if key == "x0":
        return [_number(x, f"simulation.x0[{i}]") for i, x in enumerate(v)]
    return _number(v, f"simulation.{key}")


def cmd_simulate(args) -> int:
    cfg = read_config(args.config)
    x0 = _sim_setting(cfg, args.x0, "x0")
    t0 = _sim_setting(cfg, args.t0, "t0", 0.0)
    tf = _sim_setting(cfg, args.tf, "tf")
    step = _sim_setting(cfg, args.step, "step", 1e-2)
    kappa = args.kappa if args.kappa is not None else cfg.kappa
    try:
        trace = integrate(cfg.traj, cfg.pert, x0, t0, tf, step, kappa=kappa)
    except ValueError as exc:
        if isinstance(exc, ModelInconsistencyError):
            raise
        raise ConfigError("simulation", str(exc)) from None
    monitor = iss = None
    status = EXIT_OK
    if args.check_iss is not None:
        kappa = _require_kappa(cfg, args.kappa)
        if args.check_iss:
            try:
                cert = certificate_from_report(json.loads(Path(args.check_iss).read_text()))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(args.check_iss, str(exc)) from None
            constants = cert.constants
            kappa = cert.kappa
        else:
            _, cert, _, constants = run_certify(cfg, kappa)
        if not cert.feasible:
            print("certificate is infeasible; nothing to check", file=sys.stderr)
            status = EXIT_INFEASIBLE
        else:
            profile = CumulativeProfile(cfg.traj, cfg.pert, kappa)
            monitor = monitor_W(trace, ShiftedTrajectory(cfg.traj, kappa), constants, cert.params, profile,
                                cfg.pert)
            iss = verify_iss(trace, cert, cfg.pert)
            print(f"iss margin = {iss.margin:.6g} (relative {iss.relative_margin:.6g})", file=sys.stderr)
            if not monitor.ok:
                kind, t, detail = monitor.first_violation
                print(f"monitor violation ({kind}) at t={t:.17g}: {detail}", file=sys.stderr)
                status = EXIT_MONITOR
            if not iss.ok:
                print(f"ISS envelope violated at t={iss.first_violation:.17g}; either the certificate "
                      "constants or the integration step is at fault", file=sys.stderr)
                status = EXIT_MONITOR
    if trace.nominal:
        print("note: no explicit g given; simulated the nominal system", file=sys.stderr)
    buf = io.StringIO()
    write_csv(buf, trace, monitor, iss)
    if args.csv:
        Path(args.csv).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return status


def _compare(name: str, got, want, tol: float, rows: list) -> bool:
    if isinstance(want, bool) or want is None:
        ok = got == want
    else:
        ok = got is not None and abs(float(got) - float(want)) <= tol
    rows.append({"quantity": name, "value": got, "golden": want, "tolerance": tol, "ok": ok})
    return ok


def reproduce(example_id: str) -> dict:
    cfg = bundled_config(example_id)
    rows: list = []
    golden = cfg.golden
    if example_id == "paper-sec5":
        report, cert, _, constants = run_certify(cfg)
        values = {"c1": constants.c1, "c2": constants.c2, "int_phi": report["int_phi"],
                  "int_gamma": report["int_gamma"], "tv_tilde": report["tv_tilde"],
                  "lhs": report["lhs"], "rhs": report["rhs"], "feasible": cert.feasible}
    elif example_id == "remark-counterexample":
        reg = check_regularity(cfg.traj)
        values = {"assumption24_suspect": reg.assumption24_suspect}
    else:
        values = _switched_demo(cfg)
    for key, want in golden.items():
        _compare(key, values.get(key), want, GOLDEN_TOL, rows)
    return {"schema_version": SCHEMA_VERSION, "example": example_id,
            "match": all(r["ok"] for r in rows), "values": values, "diff": rows}


def _switched_demo(cfg: SystemConfig) -> dict:
    sw = cfg.switched
    kappa = sw["kappa_s"]
    constants = constants_spectral(cfg.traj, kappa)
    sched = sw["schedule"]
    lam = 0.9 * lambda_bound(constants)
    rng = np.random.default_rng(7)
    W = sched.length
    dominated = True
    worst_gap = math.inf
    windows = [(0.0, W)] + [tuple(sorted(rng.uniform(0, 2 * W, 2))) for _ in range(20)]
    for t_a, t_b in windows:
        if t_b - t_a < 1e-6:
            continue
        _, s_lhs = switched_condition(sw["modes"], sched, sw["kappa_s"], sw["kappa_u"], constants, lam, 0.0,
                                      t_a, t_b)
        g_lhs = lhs(cfg.traj, cfg.pert, kappa, constants, t_a, t_b)
        worst_gap = min(worst_gap, s_lhs - g_lhs)
        dominated = dominated and s_lhs >= g_lhs - 1e-9
    rho_s = switched_min_rho(sw["modes"], sched, sw["kappa_s"], sw["kappa_u"], constants, lam)
    return {"switched_dominates": dominated, "min_gap": worst_gap,
            "switched_feasible": math.isfinite(rho_s), "lambda": lam,
            "switched_rho": rho_s if math.isfinite(rho_s) else None}


def cmd_reproduce(args) -> int:
    out = reproduce(args.example_id)
    _emit(out, args.json)
    for r in out["diff"]:
        mark = "ok" if r["ok"] else "MISMATCH"
        print(f"{mark:8s} {r['quantity']}: {r['value']} (golden {r['golden']})", file=sys.stderr)
    return EXIT_OK if out["match"] else EXIT_INFEASIBLE


# ----------------------------------------------------------------------


def _floats(text: str):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ltvcert", description="Stability certificates for perturbed LTV systems with jumps.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse a config and report regularity")
    v.add_argument("config")
    v.add_argument("--json", help="write the report here instead of stdout")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("certify", help="evaluate the window criterion and ISS constants")
    c.add_argument("config")
    c.add_argument("--kappa", type=float)
    c.add_argument("--lambda", dest="lam", type=float)
    c.add_argument("--rho", type=float)
    c.add_argument("--mode", choices=("spectral", "formula"))
    c.add_argument("--json")
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("simulate", help="integrate the system and optionally check the certificate")
    s.add_argument("config")
    s.add_argument("--x0", type=_floats)
    s.add_argument("--t0", type=float)
    s.add_argument("--tf", type=float)
    s.add_argument("--step", type=float)
    s.add_argument("--kappa", type=float)
    s.add_argument("--csv")
    s.add_argument("--check-iss", nargs="?", const="", default=None, metavar="CERT_JSON",
                   help="check monitors and the ISS envelope; certifies inline without a report file")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reproduce", help="run a bundled example and diff against golden values")
    r.add_argument("example_id", choices=EXAMPLES)
    r.add_argument("--json")
    r.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        try:
            worker_count()
        except ValueError as exc:
            raise ConfigError(THREADS_ENV, str(exc)) from None
        return args.func(args)
    except (ConfigError, ModelInconsistencyError, TrajectoryError, _expr.ExpressionError,
            LyapunovError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SimulationBlowUp as exc:
        print(f"monitor violation: {exc}", file=sys.stderr)
        return EXIT_MONITOR


if __name__ == "__main__":
    sys.exit(main())
