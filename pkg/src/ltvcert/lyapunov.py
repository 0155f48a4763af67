"""Lyapunov matrices along the shifted path and the constants c, c1, c2.

``P(t)`` solves ``At^T P + P At + I = 0`` for the shifted matrix ``At``.  Two
ways of producing the sandwich constants are offered: the closed form built
from ``L``, ``alpha_max`` and the exponential-decay constant ``c`` (mode
``"formula"``), and direct spectral bounds of the sampled ``P(t)`` (mode
``"spectral"``, the default, and much tighter).
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .spectral import ShiftedTrajectory, abscissa, ramp
from .trajectory import MatrixTrajectory

__all__ = [
    "LyapunovError",
    "NotHurwitzError",
    "IllConditionedError",
    "LyapunovSolution",
    "ConstantsBundle",
    "expm",
    "solve_lyapunov",
    "constants_formula",
    "estimate_c",
    "constants_spectral",
    "p_difference_check",
    "sample_times",
    "worker_count",
    "THREADS_ENV",
]

THREADS_ENV = "LTVCERT_THREADS"


def worker_count() -> int:
    """Threads for grid evaluation: ``$LTVCERT_THREADS`` if set, else 1."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


class LyapunovError(ArithmeticError):
    pass


class NotHurwitzError(LyapunovError):
    pass


class IllConditionedError(LyapunovError):
    pass


# ----------------------------------------------------------------------
# Matrix exponential: scaling and squaring with a [13/13] Pade approximant
# ----------------------------------------------------------------------

_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)
_THETA13 = 5.371920351148152


def expm(M) -> np.ndarray:
    A = np.asarray(M, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    n = A.shape[0]
    norm1 = np.linalg.norm(A, 1)
    if norm1 == 0.0:
        return np.eye(n)
    s = 0
    if norm1 > _THETA13:
        s = int(math.ceil(math.log2(norm1 / _THETA13)))
        A = A / 2.0 ** s
    b = _PADE13
    ident = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    R = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        R = R @ R
    if not np.all(np.isfinite(R)):
        raise OverflowError("matrix exponential overflowed")
    return R


# ----------------------------------------------------------------------
# Lyapunov equation
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class LyapunovSolution:
    P: np.ndarray
    residual_norm: float
    condition: float

    @property
    def eig_min(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[0])

    @property
    def eig_max(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[-1])


_OPERATOR_CACHE: dict = {}


def _sym_index(n: int):
    if n not in _OPERATOR_CACHE:
        pairs = [(i, j) for i in range(n) for j in range(i, n)]
        # duplication: column k of D puts p_k in (i, j) and (j, i)
        D = np.zeros((n * n, len(pairs)))
        rows = np.zeros(len(pairs), dtype=int)
        for k, (i, j) in enumerate(pairs):
            D[i * n + j, k] = 1.0
            D[j * n + i, k] = 1.0
            rows[k] = i * n + j
        rhs = np.array([-1.0 if i == j else 0.0 for i, j in pairs])
        _OPERATOR_CACHE[n] = (pairs, D, rows, rhs)
    return _OPERATOR_CACHE[n]


def solve_lyapunov(Atil, check_hurwitz: bool = True) -> LyapunovSolution:
    """Solve ``At^T P + P At + I = 0`` for symmetric positive-definite ``P``.

    The n(n+1)/2 independent entries of ``P`` are the unknowns; the equations
    are the upper-triangular entries of the (symmetric) matrix equation.
    """
    A = np.asarray(Atil, dtype=float)
    n = A.shape[0]
    if check_hurwitz:
        alpha = abscissa(A)
        if not alpha < 0:
            raise NotHurwitzError(f"matrix is not Hurwitz (abscissa {alpha:.6g})")
    pairs, D, rows, rhs = _sym_index(n)
    ident = np.eye(n)
    # row-major vec: vec(A^T P) = (A^T kron I) vec P, vec(P A) = (I kron A^T) vec P
    K = np.kron(A.T, ident) + np.kron(ident, A.T)
    M = K[rows] @ D
    cond = float(np.linalg.cond(M))
    if not cond < 1e12:
        raise IllConditionedError(f"Lyapunov system condition estimate {cond:.3g} exceeds 1e12")
    p = np.linalg.solve(M, rhs)
    P = (D @ p).reshape(n, n)
    P = 0.5 * (P + P.T)
    res = float(np.linalg.norm(A.T @ P + P @ A + ident, 2))
    return LyapunovSolution(P=P, residual_norm=res, condition=cond)


# ----------------------------------------------------------------------
# Constants
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantsBundle:
    c1: float
    c2: float
    kappa: float
    mode: str  # "formula" | "spectral"
    c: Optional[float] = None
    beta: Optional[float] = None

    def __post_init__(self):
        if not self.c1 > 0:
            raise ValueError("c1 must be positive")
        if self.c1 > self.c2:
            raise ValueError(f"inconsistent constants: c1={self.c1} exceeds c2={self.c2}")
        if self.beta is not None and not 0 < self.beta < self.kappa:
            raise ValueError("beta must lie in (0, kappa)")
        if self.mode not in ("formula", "spectral"):
            raise ValueError(f"unknown constants mode {self.mode!r}")

    def as_dict(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "kappa": self.kappa, "mode": self.mode,
                "c": self.c, "beta": self.beta}


def constants_formula(L: float, alpha_max: float, kappa: float, beta: float, c: float) -> ConstantsBundle:
    if not 0 < beta < kappa:
        raise ValueError("beta must lie in (0, kappa)")
    if not c >= 1:
        raise ValueError("c must be at least 1")
    c1 = 1.0 / (2.0 * (L + ramp(alpha_max + kappa)))
    c2 = c * c / (2.0 * beta)
    return ConstantsBundle(c1=c1, c2=c2, kappa=kappa, mode="formula", c=c, beta=beta)


def sample_times(traj: MatrixTrajectory, grid_step: Optional[float] = None, min_per_segment: int = 200):
    """Per-segment sample grids ``(segment, ts)``; each includes both segment ends.

    The final node of each grid stands for the left limit at the segment end.
    """
    out = []
    for seg in traj.segments:
        width = seg.t_end - seg.t_start
        m = min_per_segment
        if grid_step is not None:
            m = max(m, int(math.ceil(width / grid_step)))
        out.append((seg, np.linspace(seg.t_start, seg.t_end, m + 1)))
    return out


def _shifted_samples(traj: MatrixTrajectory, kappa: float, grid_step, min_per_segment=200):
    sh = ShiftedTrajectory(traj, kappa)
    mats = []
    for seg, ts in sample_times(traj, grid_step, min_per_segment):
        for m in seg.evaluate(ts):
            mats.append(sh.shift_matrix(m))
    return mats


def _c_for_matrices(mats, beta: float, s_max: float, n_s: int) -> float:
    ds = s_max / n_s
    growth = np.exp(beta * ds)
    best = 1.0
    for At in mats:
        E = expm(ds * At)
        X = np.eye(At.shape[0])
        w = 1.0
        for _ in range(n_s):
            X = X @ E
            w *= growth
            best = max(best, float(np.linalg.norm(X, 2)) * w)
    return best


def estimate_c(traj: MatrixTrajectory, kappa: float, beta: Optional[float] = None,
               s_max: Optional[float] = None, grid_step: Optional[float] = None,
               n_s: int = 400, margin: float = 1.05) -> float:
    """Grid estimate of the smallest ``c`` with ``||exp(s At(t))|| <= c exp(-beta s)``."""
    if beta is None:
        beta = kappa / 2
    if not 0 < beta < kappa:
        raise ValueError("beta must lie in (0, kappa)")
    if s_max is None:
        s_max = 20.0 / beta
    if not s_max > 0:
        raise ValueError("s_max must be positive")
    mats = _shifted_samples(traj, kappa, grid_step)
    return margin * _c_for_matrices(mats, beta, s_max, n_s)


def _golden_extreme(f, a, b, sign, iters=40):
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = sign * f(c), sign * f(d)
    best = max(fc, fd)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = sign * f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = sign * f(d)
        best = max(best, fc, fd)
    return sign * best


def constants_spectral(traj: MatrixTrajectory, kappa: float, grid_step: Optional[float] = None,
                       min_per_segment: int = 200, rel_margin: float = 1e-6) -> ConstantsBundle:
    """c1, c2 from the extreme eigenvalues of ``P(t)`` over a sampled grid.

    Each segment is sampled (end node as left limit) and the sampled extremes
    are polished by golden-section search in the neighbouring cells.
    """
    sh = ShiftedTrajectory(traj, kappa)

    def eigs_at(seg, t):
        t = min(max(t, seg.t_start), seg.t_end)
        return np.linalg.eigvalsh(solve_lyapunov(sh.shift_matrix(seg.evaluate(t))).P)

    lo, hi = math.inf, -math.inf
    workers = worker_count()
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    for seg, ts in sample_times(traj, grid_step, min_per_segment):
        if pool is None:
            ev = np.array([eigs_at(seg, t) for t in ts])
        else:
            ev = np.array(list(pool.map(lambda t, s=seg: eigs_at(s, t), ts)))
        kmin, kmax = int(np.argmin(ev[:, 0])), int(np.argmax(ev[:, -1]))
        lo = min(lo, float(ev[kmin, 0]))
        hi = max(hi, float(ev[kmax, -1]))
        a, b = ts[max(kmin - 1, 0)], ts[min(kmin + 1, len(ts) - 1)]
        lo = min(lo, _golden_extreme(lambda s: eigs_at(seg, s)[0], a, b, -1.0))
        a, b = ts[max(kmax - 1, 0)], ts[min(kmax + 1, len(ts) - 1)]
        hi = max(hi, _golden_extreme(lambda s: eigs_at(seg, s)[-1], a, b, 1.0))
    if pool is not None:
        pool.shutdown()
    return ConstantsBundle(c1=lo * (1 - rel_margin), c2=hi * (1 + rel_margin), kappa=kappa, mode="spectral")


def p_difference_check(P_a, P_b, Atil_a, Atil_b, c2: float):
    """Check ``||P_b - P_a|| <= 2 c2^2 ||At_b - At_a||``; returns (holds, slack)."""
    lhs = float(np.linalg.norm(np.asarray(P_b) - np.asarray(P_a), 2))
    rhs = 2.0 * c2 * c2 * float(np.linalg.norm(np.asarray(Atil_b) - np.asarray(Atil_a), 2))
    slack = rhs - lhs
    return slack >= 0.0, slack
