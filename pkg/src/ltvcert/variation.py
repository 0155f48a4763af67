"""Total variation of A, of the unstable excess phi and of the shifted path.

All windows are half-open, ``(t_a, t_b]``: a jump sitting exactly at ``t_b`` is
counted, one at ``t_a`` is not, so variations add up over adjacent windows.
The continuous part of each variation is an adaptive Simpson integral of the
pointwise derivative norm over the smooth pieces of the window; the jump part
sums the jump sizes.  ``tv_oracle`` gives an independent lower bound from
partition sums and is meant for testing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import expr as _expr
from .expr import Expression
from .spectral import ShiftedTrajectory, abscissa, phi_kappa
from .trajectory import MatrixTrajectory

__all__ = [
    "QuadratureError",
    "QuadResult",
    "VariationBreakdown",
    "adaptive_simpson",
    "phi_kinks",
    "window_breakpoints",
    "tv_A",
    "tv_phi",
    "tv_tilde",
    "integral_phi",
    "integral_expression",
    "tv_oracle",
    "check_prop1",
]

QUAD_TOL = 1e-8
MAX_DEPTH = 30
# integrand evaluations allowed per quadrature call before giving up
MAX_EVALS = 200_000
KINK_TOL = 1e-10
KINK_SCAN = 64
_INITIAL_PANELS = 8
# absolute accuracy of finite-difference derivatives of phi
FD_NOISE = 1e-10


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    converged: bool


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = QUAD_TOL,
                     max_depth: int = MAX_DEPTH, noise: float = 0.0,
                     panels: int = _INITIAL_PANELS, max_evals: int = MAX_EVALS) -> QuadResult:
    """Adaptive Simpson quadrature with Richardson correction.

    The interval is first cut into a few panels so that symmetric integrands
    cannot fool the very first error estimate.  Tolerance is shared between
    panels in proportion to their width.  ``noise`` is the absolute accuracy
    of the integrand itself (finite-difference integrands); panels whose
    Simpson correction is below ``noise * width`` are accepted.  Refinement
    stops, unconverged, once ``max_evals`` integrand calls are spent.
    """
    if b <= a:
        return QuadResult(0.0, 0.0, True)
    total = 0.0
    err = 0.0
    ok = True
    budget = [max_evals]
    edges = np.linspace(a, b, panels + 1)
    fvals = [f(float(x)) for x in edges]
    for k in range(panels):
        lo, hi = float(edges[k]), float(edges[k + 1])
        flo, fhi = fvals[k], fvals[k + 1]
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        whole = (hi - lo) / 6.0 * (flo + 4.0 * fm + fhi)
        v, e, c = _simpson_rec(f, lo, hi, flo, fm, fhi, whole, tol / panels, max_depth, noise, budget)
        total += v
        err += e
        ok = ok and c
    return QuadResult(total, err, ok)


def _simpson_rec(f, a, b, fa, fm, fb, whole, tol, depth, noise, budget):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    budget[0] -= 2
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    if abs(delta) <= 15.0 * max(tol, noise * (b - a)):
        return left + right + delta / 15.0, abs(delta) / 15.0, True
    if depth <= 0 or m <= a or m >= b or budget[0] <= 0:
        return left + right + delta / 15.0, abs(delta) / 15.0, False
    v1, e1, c1 = _simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1, noise, budget)
    v2, e2, c2 = _simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1, noise, budget)
    return v1 + v2, e1 + e2, c1 and c2


@dataclass(frozen=True)
class VariationBreakdown:
    continuous_part: float
    jump_part: float
    window: tuple
    error_estimate: float = 0.0
    converged: bool = True

    @property
    def total(self) -> float:
        return self.continuous_part + self.jump_part

    def as_dict(self) -> dict:
        return {
            "continuous_part": self.continuous_part,
            "jump_part": self.jump_part,
            "total": self.total,
            "window": list(self.window),
            "error_estimate": self.error_estimate,
            "converged": self.converged,
        }


# ----------------------------------------------------------------------
# Piece-local evaluation
# ----------------------------------------------------------------------


class _Piece:
    """Smooth piece ``[a, b]`` of a trajectory, evaluated through one segment.

    Both ends are evaluated as limits from inside the piece.  Once a piece is
    free of phi kinks, ``active`` records whether phi is positive on it; phi
    is then either identically zero or exactly ``alpha + kappa`` there.
    """

    __slots__ = ("a", "b", "seg", "dseg", "shift", "active")

    def __init__(self, traj: MatrixTrajectory, a: float, b: float):
        mid = 0.5 * (a + b)
        i, tau = traj._locate(mid)
        self.a, self.b = a, b
        self.seg = traj.segments[i]
        self.dseg = traj._derivs[i]
        self.shift = mid - tau
        self.active = None

    def sub(self, a: float, b: float, kappa: Optional[float]) -> "_Piece":
        p = _Piece.__new__(_Piece)
        p.a, p.b, p.seg, p.dseg, p.shift = a, b, self.seg, self.dseg, self.shift
        p.active = None if kappa is None else p.alpha_gap(0.5 * (a + b), kappa) > 0
        return p

    def A(self, t: float) -> np.ndarray:
        return self.seg.evaluate(t - self.shift)

    def dA(self, t: float) -> np.ndarray:
        return self.dseg.evaluate(t - self.shift)

    def alpha_gap(self, t: float, kappa: float) -> float:
        return abscissa(self.A(t)) + kappa

    def phi(self, t: float, kappa: float) -> float:
        return phi_kappa(self.A(t), kappa)

    def dphi(self, t: float, kappa: float) -> float:
        """Derivative of phi: zero on inactive pieces, else a difference quotient of alpha.

        Central differences inside the piece, second-order one-sided ones
        within a step of either end, so no sample leaves the piece.
        """
        if self.active is False:
            return 0.0
        a, b = self.a, self.b
        h = min(1e-5 * max(1.0, abs(t)), 0.25 * (b - a))
        f = lambda s: abscissa(self.A(s))  # noqa: E731
        if t - a < h:
            return (-3.0 * f(t) + 4.0 * f(t + h) - f(t + 2 * h)) / (2.0 * h)
        if b - t < h:
            return (3.0 * f(t) - 4.0 * f(t - h) + f(t - 2 * h)) / (2.0 * h)
        return (f(t + h) - f(t - h)) / (2.0 * h)


def _bisect_root(g, lo: float, hi: float, glo: float, tol: float = KINK_TOL, cap: int = 200) -> float:
    for _ in range(cap):
        if hi - lo <= tol:
            return 0.5 * (lo + hi)
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if (gm > 0) == (glo > 0):
            lo, glo = mid, gm
        else:
            hi = mid
    raise QuadratureError(f"kink localisation did not converge on [{lo}, {hi}]")


def _piece_kinks(piece: _Piece, kappa: float) -> list:
    g = lambda t: piece.alpha_gap(t, kappa)  # noqa: E731
    ts = np.linspace(piece.a, piece.b, KINK_SCAN + 1)
    gs = [g(float(t)) for t in ts]
    out = []
    for k in range(KINK_SCAN):
        if (gs[k] > 0) != (gs[k + 1] > 0):
            r = _bisect_root(g, float(ts[k]), float(ts[k + 1]), gs[k])
            if piece.a < r < piece.b:
                out.append(r)
    return out


def phi_kinks(traj: MatrixTrajectory, kappa: float, t_a: float, t_b: float) -> list:
    """Times in ``(t_a, t_b)`` where ``alpha(A(t)) + kappa`` changes sign inside a segment."""
    out = []
    for a, b in traj.smooth_pieces(t_a, t_b):
        out.extend(_piece_kinks(_Piece(traj, a, b), kappa))
    return out


def _subpieces(traj, kappa, t_a, t_b, with_kinks: bool):
    """Smooth pieces of the window, further split at phi kinks when requested."""
    out = []
    for a, b in traj.smooth_pieces(t_a, t_b):
        piece = _Piece(traj, a, b)
        cuts = [a] + (_piece_kinks(piece, kappa) if with_kinks else []) + [b]
        for lo, hi in zip(cuts, cuts[1:]):
            if hi > lo:
                out.append(piece.sub(lo, hi, kappa if with_kinks else None))
    return out


def window_breakpoints(traj: MatrixTrajectory, kappa: float, t_a: float, t_b: float) -> list:
    """Segment boundaries and phi kinks strictly inside ``(t_a, t_b)``."""
    pts = set()
    for p in _subpieces(traj, kappa, t_a, t_b, True):
        pts.add(p.a)
        pts.add(p.b)
    return sorted(x for x in pts if t_a < x < t_b)


def _check_window(traj: MatrixTrajectory, t_a: float, t_b: float):
    if not 0 <= t_a < t_b:
        raise ValueError("need 0 <= t_a < t_b")
    if traj.period is None and t_b > traj.horizon:
        raise ValueError(f"window end {t_b} beyond the defined horizon {traj.horizon}")


def _integrate_pieces(pieces, integrand, tol, noise=0.0):
    total = err = 0.0
    ok = True
    for p in pieces:
        share = tol * max((p.b - p.a), 1e-300) / max(sum(q.b - q.a for q in pieces), 1e-300)
        r = adaptive_simpson(lambda t, p=p: integrand(p, t), p.a, p.b, tol=max(share, 1e-14), noise=noise)
        total += r.value
        err += r.error
        ok = ok and r.converged
    return total, err, ok


def _finish(cont, err, ok, jumps, window, strict):
    if strict and not ok:
        raise QuadratureError(f"quadrature did not converge on {window}; achieved error {err:.3g}")
    return VariationBreakdown(continuous_part=cont, jump_part=jumps, window=window,
                              error_estimate=err, converged=ok)


# ----------------------------------------------------------------------
# Variations
# ----------------------------------------------------------------------


def tv_A(traj: MatrixTrajectory, t_a: float, t_b: float, tol: float = QUAD_TOL,
         strict: bool = False) -> VariationBreakdown:
    _check_window(traj, t_a, t_b)
    pieces = _subpieces(traj, None, t_a, t_b, False)
    cont, err, ok = _integrate_pieces(pieces, lambda p, t: float(np.linalg.norm(p.dA(t), 2)), tol)
    jumps = sum(traj.jump_size(t) for t in traj.jump_set(t_a, t_b))
    return _finish(cont, err, ok, jumps, (t_a, t_b), strict)


def tv_phi(traj: MatrixTrajectory, kappa: float, t_a: float, t_b: float, tol: float = QUAD_TOL,
           strict: bool = False) -> VariationBreakdown:
    _check_window(traj, t_a, t_b)
    pieces = _subpieces(traj, kappa, t_a, t_b, True)
    cont, err, ok = _integrate_pieces(pieces, lambda p, t: abs(p.dphi(t, kappa)), tol, FD_NOISE)
    sh = ShiftedTrajectory(traj, kappa)
    jumps = sum(abs(sh.phi(t) - sh.phi_left(t)) for t in traj.jump_set(t_a, t_b))
    return _finish(cont, err, ok, jumps, (t_a, t_b), strict)


def tv_tilde(traj: MatrixTrajectory, kappa: float, t_a: float, t_b: float, tol: float = QUAD_TOL,
             strict: bool = False) -> VariationBreakdown:
    _check_window(traj, t_a, t_b)
    pieces = _subpieces(traj, kappa, t_a, t_b, True)
    n = traj.n
    eye = np.eye(n)

    def integrand(p, t):
        return float(np.linalg.norm(p.dA(t) - p.dphi(t, kappa) * eye, 2))

    cont, err, ok = _integrate_pieces(pieces, integrand, tol, FD_NOISE)
    sh = ShiftedTrajectory(traj, kappa)
    jumps = sum(float(np.linalg.norm(sh.value_at(t) - sh.left_limit(t), 2))
                for t in traj.jump_set(t_a, t_b))
    return _finish(cont, err, ok, jumps, (t_a, t_b), strict)


def integral_phi(traj: MatrixTrajectory, kappa: float, t_a: float, t_b: float,
                 tol: float = QUAD_TOL) -> float:
    """Plain integral of ``phi_kappa(A(t))`` over the window."""
    _check_window(traj, t_a, t_b)
    pieces = _subpieces(traj, kappa, t_a, t_b, True)
    return _integrate_pieces(pieces, lambda p, t: p.phi(t, kappa), tol)[0]


def integral_expression(e: Expression, t_a: float, t_b: float, breakpoints=(),
                        tol: float = QUAD_TOL) -> float:
    """Integral of a scalar expression of time, split at the given breakpoints."""
    cuts = [t_a] + sorted(x for x in breakpoints if t_a < x < t_b) + [t_b]
    total = 0.0
    width = t_b - t_a
    for lo, hi in zip(cuts, cuts[1:]):
        if hi > lo:
            total += adaptive_simpson(lambda t: _expr.evaluate(e, t), lo, hi,
                                      tol=max(tol * (hi - lo) / width, 1e-14)).value
    return total


# ----------------------------------------------------------------------
# Partition-sum oracle and the comparison inequality
# ----------------------------------------------------------------------


def _path_values(traj: MatrixTrajectory, quantity: str, kappa: Optional[float], ts: np.ndarray):
    last_left = traj.period is None and ts[-1] >= traj.horizon
    inner = ts[:-1] if last_left else ts
    mats = traj.values(inner)
    if last_left:
        mats = np.concatenate([mats, traj.left_limit(ts[-1])[None]], axis=0)
    if quantity == "A":
        return mats
    phis = np.array([phi_kappa(m, kappa) for m in mats])
    if quantity == "phi":
        return phis
    if quantity == "tilde":
        return mats - phis[:, None, None] * np.eye(traj.n)[None]
    raise ValueError(f"unknown quantity {quantity!r}")


def tv_oracle(traj: MatrixTrajectory, t_a: float, t_b: float, partition_depth: int,
              quantity: str = "A", kappa: Optional[float] = None) -> float:
    """Partition sum over the uniform dyadic partition with ``2**depth`` cells.

    A lower bound on the total variation; refining the depth never decreases it.
    """
    if partition_depth < 1:
        raise ValueError("partition_depth must be at least 1")
    _check_window(traj, t_a, t_b)
    ts = np.linspace(t_a, t_b, 2 ** partition_depth + 1)
    vals = _path_values(traj, quantity, kappa, ts)
    diffs = np.diff(vals, axis=0)
    if diffs.ndim == 1:
        return float(np.sum(np.abs(diffs)))
    return float(np.sum(np.linalg.norm(diffs, ord=2, axis=(1, 2))))


def check_prop1(traj: MatrixTrajectory, kappa: float, t_a: float, t_b: float):
    """Variation of the shifted path against the sum of the two variations.

    Returns ``(holds, slack, (tv_tilde, tv_A, tv_phi))``; holds when slack >= -1e-9.
    """
    vt = tv_tilde(traj, kappa, t_a, t_b).total
    va = tv_A(traj, t_a, t_b).total
    vp = tv_phi(traj, kappa, t_a, t_b).total
    slack = va + vp - vt
    return slack >= -1e-9, slack, (vt, va, vp)
