"""Spectral abscissa, the ramp-clipped unstable excess and the shifted path.

The eigenvalue routine is a dense real nonsymmetric solver: Parlett-Reinsch
balancing, Householder reduction to upper Hessenberg form, then Francis
double-shift QR with deflation on small subdiagonals.  Only eigenvalues are
formed, never eigenvectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .trajectory import MatrixTrajectory

__all__ = [
    "EigenvalueConvergenceError",
    "eigenvalues",
    "abscissa",
    "ramp",
    "phi_kappa",
    "shifted_value",
    "ShiftedTrajectory",
    "PHI_ZERO",
]

DEFLATION_TOL = 1e-14
PHI_ZERO = 1e-12
_EPS = np.finfo(float).eps


class EigenvalueConvergenceError(ArithmeticError):
    def __init__(self, message, estimate):
        super().__init__(message)
        self.estimate = estimate


def _balance(a: list) -> None:
    n = len(a)
    radix = 2.0
    sqrdx = radix * radix
    done = False
    while not done:
        done = True
        for i in range(n):
            r = c = 0.0
            for j in range(n):
                if j != i:
                    c += abs(a[j][i])
                    r += abs(a[i][j])
            if c != 0.0 and r != 0.0:
                g = r / radix
                f = 1.0
                s = c + r
                while c < g:
                    f *= radix
                    c *= sqrdx
                g = r * radix
                while c > g:
                    f /= radix
                    c /= sqrdx
                if (c + r) / f < 0.95 * s:
                    done = False
                    g = 1.0 / f
                    row = a[i]
                    for j in range(n):
                        row[j] *= g
                    for j in range(n):
                        a[j][i] *= f


def _hessenberg(a: list) -> None:
    """In-place Householder reduction to upper Hessenberg form."""
    n = len(a)
    if n < 3:
        return
    h = np.array(a)
    for k in range(n - 2):
        x = h[k + 1:, k].copy()
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x
        v[0] += math.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        h[k + 1:, k:] -= 2.0 * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    for i in range(n):
        a[i][:] = h[i].tolist()


def _hqr(a: list, max_sweeps: int):
    """Eigenvalues of an upper Hessenberg matrix (destroys ``a``)."""
    n = len(a)
    wr = [0.0] * n
    wi = [0.0] * n
    anorm = 0.0
    for i in range(n):
        for j in range(max(i - 1, 0), n):
            anorm += abs(a[i][j])
    nn = n - 1
    t = 0.0
    sweeps = 0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = abs(a[l - 1][l - 1]) + abs(a[l][l])
                if s == 0.0:
                    s = anorm
                if abs(a[l][l - 1]) <= DEFLATION_TOL * s:
                    a[l][l - 1] = 0.0
                    break
                l -= 1
            x = a[nn][nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1][nn - 1]
            w = a[nn][nn - 1] * a[nn - 1][nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if sweeps >= max_sweeps:
                estimate = max(wr[nn + 1:] + [a[i][i] + t for i in range(nn + 1)])
                raise EigenvalueConvergenceError(
                    f"QR iteration did not converge in {max_sweeps} sweeps", estimate
                )
            if its in (10, 20):
                # exceptional shift
                t += x
                for i in range(nn + 1):
                    a[i][i] -= x
                s = abs(a[nn][nn - 1]) + abs(a[nn - 1][nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            sweeps += 1
            m = nn - 2
            while m >= l:
                z = a[m][m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1][m] + a[m][m + 1]
                q = a[m + 1][m + 1] - z - r - s
                r = a[m + 2][m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m][m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1][m - 1]) + abs(z) + abs(a[m + 1][m + 1]))
                if u <= _EPS * v:
                    break
                m -= 1
            for i in range(m, nn - 1):
                a[i + 2][i] = 0.0
                if i != m:
                    a[i + 2][i - 1] = 0.0
            for k in range(m, nn):
                if k != m:
                    p = a[k][k - 1]
                    q = a[k + 1][k - 1]
                    r = a[k + 2][k - 1] if k + 1 != nn else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k][k - 1] = -a[k][k - 1]
                else:
                    a[k][k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k][j] + q * a[k + 1][j]
                    if k + 1 != nn:
                        p += r * a[k + 2][j]
                        a[k + 2][j] -= p * z
                    a[k + 1][j] -= p * y
                    a[k][j] -= p * x
                mmin = nn if nn < k + 3 else k + 3
                for i in range(l, mmin + 1):
                    p = x * a[i][k] + y * a[i][k + 1]
                    if k + 1 != nn:
                        p += z * a[i][k + 2]
                        a[i][k + 2] -= p * r
                    a[i][k + 1] -= p * q
                    a[i][k] -= p
    return wr, wi


def eigenvalues(M) -> np.ndarray:
    """All eigenvalues of a real square matrix, as a complex array."""
    m = np.asarray(M, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    n = m.shape[0]
    if n == 1:
        return np.array([complex(m[0, 0])])
    a = m.tolist()
    _balance(a)
    _hessenberg(a)
    wr, wi = _hqr(a, max_sweeps=100 * n)
    return np.array(wr) + 1j * np.array(wi)


def abscissa(M) -> float:
    """Largest real part among the eigenvalues of ``M``."""
    m = np.asarray(M, dtype=float)
    if m.shape == (1, 1):
        return float(m[0, 0])
    return float(np.max(eigenvalues(m).real))


def ramp(s: float) -> float:
    return s if s > 0.0 else 0.0


def phi_kappa(M, kappa: float) -> float:
    """Ramp-clipped excess ``max(alpha(M) + kappa, 0)``; values below 1e-12 snap to 0."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    v = ramp(abscissa(M) + kappa)
    return 0.0 if v < PHI_ZERO else v


def shifted_value(traj: MatrixTrajectory, kappa: float, t: float) -> np.ndarray:
    return _shift(traj.value_at(t), kappa)


def _shift(A: np.ndarray, kappa: float) -> np.ndarray:
    return A - phi_kappa(A, kappa) * np.eye(A.shape[0])


@dataclass(frozen=True)
class ShiftedTrajectory:
    """``A(t) - phi_kappa(A(t)) I``: a path whose abscissa never exceeds ``-kappa``."""

    base: MatrixTrajectory
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")

    @property
    def n(self) -> int:
        return self.base.n

    def phi(self, t: float) -> float:
        return phi_kappa(self.base.value_at(t), self.kappa)

    def phi_left(self, t: float) -> float:
        return phi_kappa(self.base.left_limit(t), self.kappa)

    def value_at(self, t: float) -> np.ndarray:
        return _shift(self.base.value_at(t), self.kappa)

    def left_limit(self, t: float) -> np.ndarray:
        return _shift(self.base.left_limit(t), self.kappa)

    def values(self, ts) -> np.ndarray:
        mats = self.base.values(ts)
        eye = np.eye(self.n)
        return np.array([m - phi_kappa(m, self.kappa) * eye for m in mats])

    def shift_matrix(self, A: np.ndarray) -> np.ndarray:
        return _shift(np.asarray(A, dtype=float), self.kappa)
