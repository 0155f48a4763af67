"""The affine window criterion, its offset, and the resulting ISS constants.

For a window ``(t_a, t_b]`` the criterion compares

    c1 * int phi_kappa(A) + c2 * int gamma + c2^2 * TV(shifted A)

against ``lam * (t_b - t_a) + rho``.  Everything is driven by the running
totals from time 0 (``CumulativeProfile``); the smallest admissible ``rho`` for
a slope ``lam`` is the largest rise of ``chi(t) = H(t) - lam t`` above its
running minimum.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .lyapunov import ConstantsBundle
from .perturbation import PerturbationModel
from .spectral import ShiftedTrajectory, abscissa, phi_kappa
from .trajectory import MatrixTrajectory
from .variation import (
    FD_NOISE,
    QUAD_TOL,
    _subpieces,
    adaptive_simpson,
    integral_expression,
    integral_phi,
    tv_tilde,
)

__all__ = [
    "CertificateParams",
    "Certificate",
    "CumulativeProfile",
    "LhsTerms",
    "lhs",
    "lhs_terms",
    "lambda_bound",
    "default_epsilon",
    "min_rho",
    "iss_constants",
    "certify",
    "xi_profile",
    "xi_from_samples",
    "CertificateViolation",
    "SwitchingSchedule",
    "UnclassifiableModeError",
    "switched_condition",
    "switched_k",
    "switched_min_rho",
    "GRID_PER_PERIOD",
]

GRID_PER_PERIOD = 512
LAMBDA_SCAN_ITERS = 64
SCORE_SPAN = 10.0


class CertificateViolation(ArithmeticError):
    pass


# ----------------------------------------------------------------------
# Parameters and ISS constants
# ----------------------------------------------------------------------


def lambda_bound(constants: ConstantsBundle) -> float:
    return constants.c1 / (2.0 * constants.c2)


def default_epsilon(constants: ConstantsBundle, lam: float) -> float:
    return 0.5 * (constants.c1 / constants.c2 - 2.0 * lam)


@dataclass(frozen=True)
class CertificateParams:
    kappa: float
    lam: float
    rho: float
    epsilon: float
    constants: ConstantsBundle

    def __post_init__(self):
        c1, c2 = self.constants.c1, self.constants.c2
        if not self.lam < c1 / (2 * c2):
            raise ValueError(f"lambda {self.lam} must be below c1/(2 c2) = {c1 / (2 * c2)}")
        if not 0 < self.epsilon < c1 / c2 - 2 * self.lam:
            raise ValueError(f"epsilon {self.epsilon} outside (0, {c1 / c2 - 2 * self.lam})")
        if not self.rho >= 0 or not math.isfinite(self.rho):
            raise ValueError("rho must be finite and non-negative")


@dataclass(frozen=True)
class IssConstants:
    a: float
    b: float
    k1: float
    k2: float
    k3: float
    k3_unscaled: float


def iss_constants(params: CertificateParams) -> IssConstants:
    """Decay rate a, gain b and the envelope constants k1, k2, k3.

    Going from ``W <= e^{-at} W0 + (b/a) max delta^2`` to a bound on ``|x|``
    divides by c1, so the disturbance gain is ``sqrt(b / (a c1))``.
    ``k3_unscaled = sqrt(b / a)`` omits that factor; it is reported for
    comparison only and undercuts the true gain whenever c1 < 1.
    """
    c1, c2 = params.constants.c1, params.constants.c2
    lam, rho, eps = params.lam, params.rho, params.epsilon
    a = 1.0 / c2 - (2.0 * lam + eps) / c1
    b = (c2 * c2 / eps) * math.exp(2.0 * rho / c1)
    k1 = math.sqrt(c2 / c1) * math.exp(rho / c1)
    return IssConstants(a=a, b=b, k1=k1, k2=a / 2.0, k3=math.sqrt(b / (a * c1)), k3_unscaled=math.sqrt(b / a))


# ----------------------------------------------------------------------
# Window terms
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class LhsTerms:
    int_phi: float
    int_gamma: float
    tv_tilde: float

    def combine(self, constants: ConstantsBundle) -> float:
        c1, c2 = constants.c1, constants.c2
        return c1 * self.int_phi + c2 * self.int_gamma + c2 * c2 * self.tv_tilde


def lhs_terms(traj: MatrixTrajectory, pert: PerturbationModel, kappa: float, t_a: float,
              t_b: float) -> LhsTerms:
    ip = integral_phi(traj, kappa, t_a, t_b)
    ig = 0.0 if pert.is_zero_gamma else integral_expression(pert.gamma, t_a, t_b)
    tv = tv_tilde(traj, kappa, t_a, t_b).total
    return LhsTerms(ip, ig, tv)


def lhs(traj: MatrixTrajectory, pert: PerturbationModel, kappa: float, constants: ConstantsBundle,
        t_a: float, t_b: float) -> float:
    if not t_a < t_b:
        raise ValueError("need t_a < t_b")
    return lhs_terms(traj, pert, kappa, t_a, t_b).combine(constants)


# ----------------------------------------------------------------------
# Running totals
# ----------------------------------------------------------------------


class CumulativeProfile:
    """Running integrals from 0 of phi, gamma and the shifted-path variation.

    Jumps of the shifted path enter the variation as point masses at the jump
    times.  For periodic trajectories one period is integrated and the rest
    follows by whole-period shifts, which requires gamma to share the period.
    """

    def __init__(self, traj: MatrixTrajectory, pert: PerturbationModel, kappa: float,
                 tol: float = QUAD_TOL):
        self.traj = traj
        self.pert = pert
        self.kappa = kappa
        self.tol = tol
        self.periodic = traj.period is not None
        self.base = traj.horizon
        if self.periodic and not pert.check_periodic(traj.period):
            raise ValueError("gamma and delta must share the trajectory period for periodic certification")
        self._pieces = _subpieces(traj, kappa, 0.0, self.base, True)
        self._piece_starts = [p.a for p in self._pieces]
        sh = ShiftedTrajectory(traj, kappa)
        self.jumps = {t: float(np.linalg.norm(sh.value_at(t) - sh.left_limit(t), 2))
                      for t in traj.jump_set(0.0, self.base)}
        self.breakpoints = sorted({p.a for p in self._pieces} | {self.base})
        self._cache: dict = {}
        self._total = self._cumulative([self.base], left=False)[0]

    # per-cell integrals, cached by cell
    def _cell(self, u: float, v: float):
        key = (u, v)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        k = bisect.bisect_right(self._piece_starts, 0.5 * (u + v)) - 1
        p = self._pieces[k]
        kappa = self.kappa
        tol = max(self.tol * (v - u) / self.base, 1e-15)
        eye = np.eye(self.traj.n)
        if p.active:
            ip = adaptive_simpson(lambda t: p.phi(t, kappa), u, v, tol=tol, panels=2).value
            itv = adaptive_simpson(lambda t: float(np.linalg.norm(p.dA(t) - p.dphi(t, kappa) * eye, 2)),
                                   u, v, tol=tol, noise=FD_NOISE, panels=2).value
        else:
            ip = 0.0
            itv = adaptive_simpson(lambda t: float(np.linalg.norm(p.dA(t), 2)), u, v, tol=tol, panels=2).value
        if self.pert.is_zero_gamma:
            ig = 0.0
        else:
            ig = adaptive_simpson(lambda t: float(self.pert.gamma_at(t)), u, v, tol=tol, panels=2).value
        out = (ip, ig, itv)
        self._cache[key] = out
        return out

    def _cumulative(self, offsets, left: bool):
        """Totals over (0, tau] for offsets tau in [0, base]; ``left`` drops a jump at tau."""
        pts = sorted(set(offsets) | set(self.breakpoints) | {0.0})
        acc = np.zeros(3)
        right_vals = {0.0: acc.copy()}
        left_vals = {0.0: acc.copy()}
        for u, v in zip(pts, pts[1:]):
            acc += self._cell(u, v)
            left_vals[v] = acc.copy()
            acc[2] += self.jumps.get(v, 0.0)
            right_vals[v] = acc.copy()
        src = left_vals if left else right_vals
        return [src[o] for o in offsets]

    def components(self, times: Sequence[float], left: bool = False) -> np.ndarray:
        """Array (m, 3) of running ``[int phi, int gamma, TV]`` at ``times``."""
        times = [float(t) for t in times]
        W = self.base
        plan = []
        for t in times:
            if t < 0:
                raise ValueError("negative time")
            if self.periodic:
                k = math.floor(t / W)
                tau = t - k * W
                if tau >= W:
                    k, tau = k + 1, 0.0
                if left and tau == 0.0 and t > 0:
                    k, tau = k - 1, W
            else:
                if t > W:
                    raise ValueError(f"time {t} beyond the defined horizon {W}")
                k, tau = 0, t
            plan.append((k, tau))
        offsets = sorted({tau for _, tau in plan})
        vals = dict(zip(offsets, self._cumulative(offsets, left)))
        total = self._total if self.periodic else np.zeros(3)
        return np.array([k * total + vals[tau] for k, tau in plan])

    def H(self, times, constants: ConstantsBundle, left: bool = False) -> np.ndarray:
        comp = self.components(times, left)
        c1, c2 = constants.c1, constants.c2
        return comp @ np.array([c1, c2, c2 * c2])

    @property
    def period_totals(self) -> np.ndarray:
        """``[int phi, int gamma, TV]`` over ``(0, base]``."""
        return self._total.copy()

    def window_grid(self, span: float, per_base: int = GRID_PER_PERIOD) -> list:
        """Uniform grid on [0, span] merged with every breakpoint (unwrapped)."""
        W = self.base
        n = max(per_base, int(math.ceil(per_base * span / W)))
        pts = set(np.linspace(0.0, span, n + 1).tolist())
        k = 0
        while k * W <= span:
            for b in self.breakpoints:
                t = k * W + b
                if 0 <= t <= span:
                    pts.add(t)
            k += 1
            if not self.periodic:
                break
        return sorted(pts)

    def samples(self, span: float, constants: ConstantsBundle, per_base: int = GRID_PER_PERIOD):
        """Ordered samples ``(t, H)``; a jump time appears twice, left value first."""
        grid = self.window_grid(span, per_base)
        Hr = self.H(grid, constants)
        Hl = self.H(grid, constants, left=True)
        ts, hs = [], []
        for t, hl, hr in zip(grid, Hl, Hr):
            if hr != hl:
                ts.append(t)
                hs.append(hl)
            ts.append(t)
            hs.append(hr)
        return np.array(ts), np.array(hs)


def _rho_from_samples(ts: np.ndarray, hs: np.ndarray, lam: float):
    """Largest rise of chi = H - lam t over its running minimum, plus a cell margin.

    Between consecutive distinct sample times H only grows continuously, so
    chi can exceed its endpoint values by at most min(dH, |lam| dt) in a cell;
    twice the largest such amount bounds what the grid can miss.
    Returns (rho, index of window start, index of window end).
    """
    chi = hs - lam * ts
    runmin = np.minimum.accumulate(chi)
    rise = chi - runmin
    k_end = int(np.argmax(rise))
    k_start = int(np.argmin(chi[: k_end + 1]))
    dt = np.diff(ts)
    dh = np.diff(hs)
    cell = dt > 0
    margin = 0.0
    if np.any(cell):
        margin = 2.0 * float(np.max(np.minimum(np.maximum(dh[cell], 0.0), abs(lam) * dt[cell])))
    rho = float(rise[k_end]) + margin
    if rho > 0:
        # quadrature-level slack so finer re-evaluations stay inside the band
        rho += min(1e-7, 1e-6 * float(hs[-1] - hs[0]))
    return rho, k_start, k_end


@dataclass(frozen=True)
class RhoResult:
    rho: float
    window: tuple  # (t_a, t_b)
    window_lhs: float
    span: float


def min_rho(profile: CumulativeProfile, constants: ConstantsBundle, lam: float,
            horizon: Optional[float] = None, per_base: int = GRID_PER_PERIOD) -> RhoResult:
    """Smallest offset making every window inside the horizon satisfy the criterion.

    Periodic paths are scanned over two periods, which covers all windows as
    long as a whole period fits the slope; otherwise the offset is infinite.
    """
    if not lam < lambda_bound(constants):
        raise ValueError("lambda must be below c1/(2 c2)")
    if profile.periodic:
        W = profile.base
        per = float(profile.period_totals @ np.array([constants.c1, constants.c2, constants.c2 ** 2]))
        if per - lam * W > 1e-12 * (1.0 + per):
            return RhoResult(math.inf, (0.0, W), per, 2 * W)
        span = 2 * W if horizon is None else horizon
    else:
        span = profile.base if horizon is None else min(horizon, profile.base)
    ts, hs = profile.samples(span, constants, per_base)
    rho, ka, kb = _rho_from_samples(ts, hs, lam)
    return RhoResult(rho, (float(ts[ka]), float(ts[kb])), float(hs[kb] - hs[ka]), span)


# ----------------------------------------------------------------------
# Certificate
# ----------------------------------------------------------------------


@dataclass
class Certificate:
    feasible: bool
    kappa: float
    lam: Optional[float]
    rho: float
    epsilon: Optional[float]
    constants: ConstantsBundle
    horizon: tuple
    periodic: bool
    lhs_worst_window: tuple  # (t_a, t_b, lhs, rhs)
    reference: dict
    a: Optional[float] = None
    b: Optional[float] = None
    k1: Optional[float] = None
    k2: Optional[float] = None
    k3: Optional[float] = None
    k3_unscaled: Optional[float] = None
    notes: list = field(default_factory=list)

    @property
    def params(self) -> CertificateParams:
        return CertificateParams(self.kappa, self.lam, self.rho, self.epsilon, self.constants)

    def as_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "kappa": self.kappa,
            "lambda": self.lam,
            "lambda_bound": lambda_bound(self.constants),
            "rho": self.rho if math.isfinite(self.rho) else None,
            "epsilon": self.epsilon,
            "constants": self.constants.as_dict(),
            "horizon": list(self.horizon),
            "periodic": self.periodic,
            "worst_window": dict(zip(("t_a", "t_b", "lhs", "rhs"), self.lhs_worst_window)),
            "reference_window": self.reference,
            "iss": {"a": self.a, "b": self.b, "k1": self.k1, "k2": self.k2, "k3": self.k3,
                    "k3_unscaled": self.k3_unscaled},
            "notes": list(self.notes),
        }


def _golden_max(f, lo, hi, iters):
    g = (math.sqrt(5) - 1) / 2
    c, d = hi - g * (hi - lo), lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            hi, d, fd = d, c, fc
            c = hi - g * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + g * (hi - lo)
            fd = f(d)
    return c if fc >= fd else d


def certify(traj: MatrixTrajectory, pert: PerturbationModel, kappa: float, constants: ConstantsBundle,
            lam: Optional[float] = None, horizon: Optional[float] = None, rho: Optional[float] = None,
            epsilon: Optional[float] = None, per_base: int = GRID_PER_PERIOD,
            profile: Optional[CumulativeProfile] = None) -> Certificate:
    """Decide the criterion and, when it holds, fill in the ISS constants.

    With ``lam`` omitted the slope is chosen by golden-section search between
    the smallest slope a whole period allows and the upper bound c1/(2 c2),
    maximising the guaranteed contraction ``k2 * S - log k1`` with ``S`` ten
    periods (or ten horizons).  A user-supplied ``rho`` turns the offset into a budget:
    the verdict is then whether the smallest offset fits in it.
    """
    if profile is None:
        profile = CumulativeProfile(traj, pert, kappa)
    c1, c2 = constants.c1, constants.c2
    bound = lambda_bound(constants)
    notes = []
    W = profile.base
    totals = profile.period_totals
    ref_lhs = float(totals @ np.array([c1, c2, c2 * c2]))
    # decay budget measured over ten base lengths (periods, or the horizon)
    span_hint = SCORE_SPAN * W
    if not profile.periodic:
        notes.append(f"aperiodic trajectory: certified only on the defined horizon [0, {W}]")

    def evaluate(lmb):
        return min_rho(profile, constants, lmb, horizon, per_base)

    if lam is None:
        lam_lo = ref_lhs / W if profile.periodic else 0.0
        lam_hi = bound * (1 - 1e-9)
        if lam_lo >= lam_hi:
            lam = lam_hi
        else:
            def score(lmb):
                r = evaluate(lmb).rho
                if not math.isfinite(r):
                    return -math.inf
                eps = default_epsilon(constants, lmb)
                iss = iss_constants(CertificateParams(kappa, lmb, r, eps, constants))
                return iss.k2 * span_hint - math.log(iss.k1)
            lam = _golden_max(score, lam_lo, lam_hi, LAMBDA_SCAN_ITERS)
            if not math.isfinite(evaluate(lam).rho):
                lam = lam_hi
        notes.append("lambda chosen by golden-section scan")
    if not lam < bound:
        raise ValueError(f"lambda {lam} must be below c1/(2 c2) = {bound}")

    res = evaluate(lam)
    rho_used = res.rho
    feasible = math.isfinite(res.rho)
    if rho is not None:
        if not rho >= 0:
            raise ValueError("rho must be non-negative")
        feasible = feasible and res.rho <= rho
        rho_used = rho if feasible else res.rho
        notes.append(f"offset budget rho={rho} supplied; smallest admissible offset {res.rho}")
    reference = {
        "t_a": 0.0,
        "t_b": W,
        "int_phi": float(totals[0]),
        "int_gamma": float(totals[1]),
        "tv_tilde": float(totals[2]),
        "lhs": ref_lhs,
        "rhs": lam * W,
        "rhs_with_rho": lam * W + (rho_used if math.isfinite(rho_used) else math.inf),
    }
    t_a, t_b = res.window
    worst = (t_a, t_b, res.window_lhs, lam * (t_b - t_a) + rho_used)
    cert = Certificate(
        feasible=feasible,
        kappa=kappa,
        lam=lam,
        rho=rho_used,
        epsilon=None,
        constants=constants,
        horizon=(0.0, math.inf if profile.periodic else W),
        periodic=profile.periodic,
        lhs_worst_window=worst,
        reference=reference,
        notes=notes,
    )
    if feasible:
        eps = default_epsilon(constants, lam) if epsilon is None else epsilon
        iss = iss_constants(CertificateParams(kappa, lam, rho_used, eps, constants))
        cert.epsilon = eps
        cert.a, cert.b, cert.k1, cert.k2, cert.k3 = iss.a, iss.b, iss.k1, iss.k2, iss.k3
        cert.k3_unscaled = iss.k3_unscaled
        if iss.a < 1e-3 / c2:
            notes.append(f"decay rate a={iss.a:.3g} is close to zero; lambda sits near its bound")
    return cert


def xi_from_samples(ts, hs, lam: float, rho: float, check: bool = True) -> np.ndarray:
    """``xi = min_{s<=t} chi(s) - chi(t) + rho`` on ordered samples ``(ts, hs)`` of H starting at 0."""
    ts = np.asarray(ts, dtype=float)
    chi = np.asarray(hs, dtype=float) - lam * ts
    xi = np.minimum.accumulate(chi) - chi + rho
    if check:
        bad = np.flatnonzero(xi < -1e-9)
        if bad.size:
            k = int(bad[0])
            raise CertificateViolation(f"xi({ts[k]:.6g}) = {xi[k]:.3g} < 0: offset rho too small")
    return xi


def xi_profile(profile: CumulativeProfile, constants: ConstantsBundle, lam: float, rho: float,
               span: Optional[float] = None, per_base: int = GRID_PER_PERIOD, check: bool = True):
    """Sampled ``xi`` on ``[0, span]``; returns ``(ts, xi)`` with jump times listed twice (left first)."""
    if span is None:
        span = 2 * profile.base if profile.periodic else profile.base
    ts, hs = profile.samples(span, constants, per_base)
    return ts, xi_from_samples(ts, hs, lam, rho, check)


# ----------------------------------------------------------------------
# Switched systems
# ----------------------------------------------------------------------


class UnclassifiableModeError(ValueError):
    pass


@dataclass(frozen=True)
class SwitchingSchedule:
    """Piecewise-constant mode index: ``modes[k]`` is active on ``[times[k], times[k+1])``."""

    times: tuple
    modes: tuple
    period: Optional[float] = None

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        ms = tuple(int(m) for m in self.modes)
        if len(ts) != len(ms) + 1 or ts[0] != 0.0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("schedule needs increasing times from 0 and one mode per interval")
        object.__setattr__(self, "times", ts)
        object.__setattr__(self, "modes", ms)
        if self.period is not None and not math.isclose(ts[-1], self.period):
            raise ValueError("period must equal the schedule length")

    @property
    def length(self) -> float:
        return self.times[-1]

    def mode_at(self, t: float) -> int:
        if self.period is not None:
            t = t - math.floor(t / self.period) * self.period
        k = bisect.bisect_right(self.times, t) - 1
        return self.modes[min(k, len(self.modes) - 1)]

    def _events(self, t_a: float, t_b: float):
        """Unwrapped change points in [t_a, t_b] (mode actually changes)."""
        out = []
        W = self.length
        reps = range(math.floor(t_a / W), math.floor(t_b / W) + 1) if self.period else [0]
        for r in reps:
            for k in range(len(self.modes)):
                t = r * W + self.times[k]
                if t <= 0 or not t_a <= t <= t_b:
                    continue
                if k == 0 and self.period is None:
                    continue
                prev = self.modes[k - 1] if k > 0 else self.modes[-1]
                if prev != self.modes[k]:
                    out.append(t)
        return sorted(out)

    def switch_count(self, t_a: float, t_b: float) -> int:
        return len(self._events(t_a, t_b))

    def active_time(self, t_a: float, t_b: float, members) -> float:
        members = set(members)
        W = self.length
        total = 0.0
        reps = range(math.floor(t_a / W), math.floor(t_b / W) + 1) if self.period else [0]
        for r in reps:
            for k, m in enumerate(self.modes):
                if m not in members:
                    continue
                lo = max(t_a, r * W + self.times[k])
                hi = min(t_b, r * W + self.times[k + 1])
                if hi > lo:
                    total += hi - lo
        return total

    def to_trajectory(self, matrices: Sequence) -> MatrixTrajectory:
        return MatrixTrajectory.piecewise_constant(
            self.times, [matrices[m] for m in self.modes], period=self.period
        )


def classify_modes(matrices: Sequence, kappa_s: float, kappa_u: float):
    """Split mode indices into (stable, unstable) sets."""
    stable, unstable = [], []
    for i, M in enumerate(matrices):
        a = abscissa(np.asarray(M, dtype=float))
        if a <= -kappa_s:
            stable.append(i)
        elif a <= kappa_u:
            unstable.append(i)
        else:
            raise UnclassifiableModeError(f"mode {i} has abscissa {a:.6g} above kappa_u={kappa_u}")
    return stable, unstable


def switched_k(matrices: Sequence, kappa_s: float) -> float:
    """Per-switch variation bound.

    Takes the largest of ``||A_i - A_j||`` and ``||At_i - At_j||`` over mode
    pairs; the shifted difference can exceed the plain one when the modes'
    shifts differ, and only the shifted one bounds the jump of the shifted path.
    """
    mats = [np.asarray(M, dtype=float) for M in matrices]
    shifted = [M - phi_kappa(M, kappa_s) * np.eye(M.shape[0]) for M in mats]
    k = 0.0
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            k = max(k, float(np.linalg.norm(mats[i] - mats[j], 2)),
                    float(np.linalg.norm(shifted[i] - shifted[j], 2)))
    return k


def switched_condition(matrices: Sequence, schedule: SwitchingSchedule, kappa_s: float, kappa_u: float,
                       constants: ConstantsBundle, lam: float, rho: float, t_a: float, t_b: float):
    """Activation-time plus switch-count form of the criterion on ``[t_a, t_b]``.

    Returns ``(holds, lhs)``.
    """
    _, unstable = classify_modes(matrices, kappa_s, kappa_u)
    k = switched_k(matrices, kappa_s)
    c1, c2 = constants.c1, constants.c2
    value = (c1 * (kappa_s + kappa_u) * schedule.active_time(t_a, t_b, unstable)
             + schedule.switch_count(t_a, t_b) * c2 * c2 * k)
    return value <= lam * (t_b - t_a) + rho, value


def switched_min_rho(matrices: Sequence, schedule: SwitchingSchedule, kappa_s: float, kappa_u: float,
                     constants: ConstantsBundle, lam: float) -> float:
    """Smallest offset for the switched form; infinite when a period overruns the slope."""
    _, unstable = classify_modes(matrices, kappa_s, kappa_u)
    k = switched_k(matrices, kappa_s)
    c1, c2 = constants.c1, constants.c2
    rate = c1 * (kappa_s + kappa_u)
    mass = c2 * c2 * k
    W = schedule.length
    if schedule.period is not None:
        per = rate * schedule.active_time(0.0, W, unstable) + mass * schedule.switch_count(0.0, W)
        if per - lam * W > 1e-12 * (1 + per):
            return math.inf
        span = 2 * W
    else:
        span = W
    # H is piecewise linear: exact extrema sit at the change points
    pts = sorted({0.0, span} | {r * W + t for r in range(2) for t in schedule.times if r * W + t <= span})
    ts, hs = [], []
    acc = 0.0
    last = 0.0
    for t in pts:
        if t > last:
            acc += rate * schedule.active_time(last, t, unstable)
        last = t
        if t > 0 and schedule.switch_count(t, t):
            ts.append(t)
            hs.append(acc)
            acc += mass
        ts.append(t)
        hs.append(acc)
    ts, hs = np.array(ts), np.array(hs)
    chi = hs - lam * ts
    return float(np.max(chi - np.minimum.accumulate(chi)))
