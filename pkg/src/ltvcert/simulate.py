"""Jump-aware integration of ``x' = A(t) x + g(t, x)`` and Lyapunov monitors.

The state is carried continuously through jumps of ``A``; only the vector
field changes.  Steps are cut at every segment boundary (and at phi kinks
when ``kappa`` is given) so each RK4 stage evaluates one smooth segment.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, TextIO

import numpy as np

from .certify import Certificate, CertificateParams, CumulativeProfile, iss_constants, xi_from_samples
from .lyapunov import ConstantsBundle, solve_lyapunov
from .perturbation import ModelInconsistencyError, PerturbationModel
from .spectral import ShiftedTrajectory
from .trajectory import MatrixTrajectory
from .variation import _subpieces

__all__ = [
    "PerturbationModel",
    "ModelInconsistencyError",
    "SimulationBlowUp",
    "SimulationTrace",
    "MonitorReport",
    "IssReport",
    "integrate",
    "monitor_W",
    "verify_iss",
    "write_csv",
    "BLOW_UP",
    "FLOW_SLACK",
    "JUMP_TOL",
]

BLOW_UP = 1e12
FLOW_SLACK = 0.05
JUMP_TOL = 1e-9
ENVELOPE_TOL = 1e-6


class SimulationBlowUp(OverflowError):
    pass


@dataclass
class SimulationTrace:
    """Samples of the state.

    ``left[k]`` marks a left-limit sample.  A jump time appears twice: the
    left-limit sample first, then the right value with the same state.
    """

    t: np.ndarray
    x: np.ndarray  # (m, n)
    left: np.ndarray  # bool (m,)
    step: float
    nominal: bool
    t0: float
    tf: float

    @property
    def norm_x(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)


def _rk4(f, t, x, h):
    k1 = f(t, x)
    k2 = f(t + h / 2, x + h / 2 * k1)
    k3 = f(t + h / 2, x + h / 2 * k2)
    k4 = f(t + h, x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(traj: MatrixTrajectory, pert: Optional[PerturbationModel], x0: Sequence[float], t0: float,
              tf: float, step: float, kappa: Optional[float] = None) -> SimulationTrace:
    """Classic RK4 with a uniform step, cut at structural breakpoints.

    Without an explicit ``g`` the unperturbed system is integrated and the
    trace is flagged nominal.  With one, the envelope bound on ``g`` is
    checked at every accepted step.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if not 0 <= t0 < tf:
        raise ValueError("need 0 <= t0 < tf")
    if traj.period is None and tf > traj.horizon:
        raise ValueError(f"tf={tf} beyond the defined horizon {traj.horizon}")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (traj.n,):
        raise ValueError(f"x0 must have {traj.n} components")
    pert = pert if pert is not None else PerturbationModel.none()
    nominal = pert.g_explicit is None

    ts, xs, left = [t0], [x.copy()], [False]
    if not nominal:
        pert.check_bound(t0, x)
    pieces = _subpieces(traj, kappa if kappa is not None else 1.0, t0, tf, kappa is not None)
    for k, piece in enumerate(pieces):
        if k > 0 and traj.is_jump(piece.a):
            ts.append(piece.a)
            xs.append(x.copy())
            left.append(False)
        if nominal:
            def f(t, y, p=piece):
                return p.A(t) @ y
        else:
            def f(t, y, p=piece):
                return p.A(t) @ y + pert.g(t, y)
        m = max(1, int(math.ceil((piece.b - piece.a) / step - 1e-9)))
        grid = np.linspace(piece.a, piece.b, m + 1)
        for u, v in zip(grid[:-1], grid[1:]):
            x = _rk4(f, float(u), x, float(v - u))
            nx = float(np.linalg.norm(x))
            if not nx <= BLOW_UP:
                raise SimulationBlowUp(f"|x| = {nx:.3g} exceeds {BLOW_UP:.0e} at t={v:.6g}; "
                                       "the system is unstable on this horizon or the step is too large")
            if not nominal:
                pert.check_bound(float(v), x)
            ts.append(float(v))
            xs.append(x.copy())
            left.append(True)
    return SimulationTrace(np.array(ts), np.array(xs), np.array(left, dtype=bool), step, nominal, t0, tf)


# ----------------------------------------------------------------------
# Monitors
# ----------------------------------------------------------------------


@dataclass
class MonitorReport:
    V: np.ndarray
    U: np.ndarray
    W: np.ndarray
    xi: np.ndarray
    ok: bool
    violations: list = field(default_factory=list)  # (kind, t, detail)

    @property
    def first_violation(self):
        return self.violations[0] if self.violations else None


def _xi_at_trace(trace: SimulationTrace, profile: CumulativeProfile, constants: ConstantsBundle,
                 lam: float, rho: float) -> np.ndarray:
    """xi at trace samples; the running minimum also covers [0, t0] on the profile grid."""
    pre_t, pre_h = (profile.samples(trace.t0, constants) if trace.t0 > 0 else (np.zeros(0), np.zeros(0)))
    Hr = profile.H(trace.t, constants)
    Hl = profile.H(trace.t, constants, left=True)
    h = np.where(trace.left, Hl, Hr)
    ts = np.concatenate([pre_t, trace.t])
    hs = np.concatenate([pre_h, h])
    if trace.t0 == 0:
        ts = np.concatenate([[0.0], ts])
        hs = np.concatenate([[0.0], hs])
    xi = xi_from_samples(ts, hs, lam, rho, check=False)
    return xi[len(ts) - len(trace.t):]


def monitor_W(trace: SimulationTrace, shifted: ShiftedTrajectory, constants: ConstantsBundle,
              params: CertificateParams, profile: CumulativeProfile,
              pert: Optional[PerturbationModel] = None) -> MonitorReport:
    """Check the weighted Lyapunov function ``W = exp(2 xi / c1) x^T P x`` along a trace.

    Flow: between samples without a jump, ``W`` must fall at rate at least
    ``0.95 a`` up to the disturbance term.  Jumps: ``W`` may not grow.  Both
    ends of the sandwich ``c1 |x|^2 <= W <= c2 exp(2 rho / c1) |x|^2`` are
    checked at every sample.
    """
    c1, c2 = constants.c1, constants.c2
    iss = iss_constants(params)
    a, b = iss.a, iss.b
    lam, rho = params.lam, params.rho
    n = len(trace.t)
    V = np.empty(n)
    for k, (t, x, lft) in enumerate(zip(trace.t, trace.x, trace.left)):
        At = shifted.left_limit(t) if lft else shifted.value_at(t)
        P = solve_lyapunov(At).P
        V[k] = float(x @ P @ x)
    xi = _xi_at_trace(trace, profile, constants, lam, rho)
    U = np.exp(2.0 * xi / c1)
    W = U * V
    violations = []
    bad = np.flatnonzero((xi < -1e-9) | (xi > rho + 1e-9))
    for k in bad[:1]:
        violations.append(("xi", float(trace.t[k]), f"xi={xi[k]:.6g} outside [0, {rho:.6g}]"))
    nx2 = trace.norm_x ** 2
    upper = c2 * math.exp(2 * rho / c1)
    for k in range(n):
        if W[k] < c1 * nx2[k] * (1 - 1e-9) or W[k] > upper * nx2[k] * (1 + 1e-9):
            violations.append(("sandwich", float(trace.t[k]),
                               f"W={W[k]:.6g} outside [{c1 * nx2[k]:.6g}, {upper * nx2[k]:.6g}]"))
            break
    has_delta = pert is not None and not pert.is_zero_delta
    for k in range(n - 1):
        t, s = trace.t[k], trace.t[k + 1]
        if s == t:
            if W[k + 1] > W[k] * (1 + JUMP_TOL) + 1e-300:
                violations.append(("jump", float(s), f"W grew from {W[k]:.12g} to {W[k + 1]:.12g}"))
            continue
        h = s - t
        bound = W[k] * math.exp(-a * (1 - FLOW_SLACK) * h)
        if has_delta:
            dmax = max(float(pert.delta_at(u)) for u in np.linspace(t, s, 5))
            bound += (b / a) * dmax * dmax * (1 - math.exp(-a * h))
        if W[k + 1] > bound * (1 + 1e-12) + 1e-300:
            violations.append(("flow", float(s), f"W={W[k + 1]:.12g} above decay bound {bound:.12g}"))
    violations.sort(key=lambda v: v[1])
    return MonitorReport(V, U, W, xi, not violations, violations)


@dataclass
class IssReport:
    envelope: np.ndarray
    margin: float  # min over samples of envelope - |x|
    relative_margin: float
    ok: bool
    first_violation: Optional[float] = None


def _running_delta(trace: SimulationTrace, pert: Optional[PerturbationModel], refine: int = 4) -> np.ndarray:
    if pert is None or pert.is_zero_delta:
        return np.zeros(len(trace.t))
    out = np.empty(len(trace.t))
    run = float(pert.delta_at(trace.t[0]))
    out[0] = run
    for k in range(1, len(trace.t)):
        for u in np.linspace(trace.t[k - 1], trace.t[k], refine + 1)[1:]:
            run = max(run, float(pert.delta_at(float(u))))
        out[k] = run
    return out


def verify_iss(trace: SimulationTrace, certificate: Certificate,
               pert: Optional[PerturbationModel] = None) -> IssReport:
    """Compare ``|x(t)|`` with ``k1 exp(-k2 (t - t0)) |x0| + k3 max delta``."""
    if not certificate.feasible:
        raise ValueError("certificate is not feasible")
    nx = trace.norm_x
    dmax = _running_delta(trace, pert)
    env = (certificate.k1 * np.exp(-certificate.k2 * (trace.t - trace.t0)) * nx[0]
           + certificate.k3 * dmax)
    slack = env * (1 + ENVELOPE_TOL) - nx
    bad = np.flatnonzero(slack < 0)
    margin = float(np.min(env - nx))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(env > 0, (env - nx) / env, 0.0)
    return IssReport(env, margin, float(np.min(rel)), bad.size == 0,
                     float(trace.t[bad[0]]) if bad.size else None)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(out: TextIO, trace: SimulationTrace, monitor: Optional[MonitorReport] = None,
              iss: Optional[IssReport] = None) -> None:
    """Columns: t, x1..xn, norm_x, V, W, xi, envelope (blank when not computed)."""
    n = trace.x.shape[1]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["norm_x", "V", "W", "xi", "envelope"])
    nx = trace.norm_x
    for k in range(len(trace.t)):
        row = [_fmt(trace.t[k])] + [_fmt(v) for v in trace.x[k]] + [_fmt(nx[k])]
        if monitor is not None:
            row += [_fmt(monitor.V[k]), _fmt(monitor.W[k]), _fmt(monitor.xi[k])]
        else:
            row += ["", "", ""]
        row.append(_fmt(iss.envelope[k]) if iss is not None else "")
        w.writerow(row)
