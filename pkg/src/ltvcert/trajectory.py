"""Piecewise closed-form matrix trajectories with jumps.

A trajectory is a list of half-open segments ``[t_start, t_end)``, each holding
an n-by-n grid of expressions.  The half-open convention makes the path
right-continuous with left limits by construction; jumps live at segment
boundaries.  With ``period`` set the path repeats, so ``A(t + period) == A(t)``.
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import expr as _expr
from .expr import Expression, EvaluationDomainError

__all__ = [
    "Segment",
    "MatrixTrajectory",
    "RegularityReport",
    "TrajectoryError",
    "check_regularity",
]


class TrajectoryError(ValueError):
    pass


def _as_expr(entry) -> Expression:
    if isinstance(entry, Expression):
        return entry
    if isinstance(entry, (int, float)):
        return _expr.Num(float(entry))
    return _expr.parse(str(entry))


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    entries: tuple  # n-tuple of n-tuples of Expression

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise TrajectoryError(f"segment start {self.t_start} must precede end {self.t_end}")
        rows = tuple(tuple(_as_expr(e) for e in row) for row in self.entries)
        n = len(rows)
        if n == 0 or any(len(r) != n for r in rows):
            raise TrajectoryError("segment entries must form a non-empty square grid")
        object.__setattr__(self, "entries", rows)

    @property
    def n(self) -> int:
        return len(self.entries)

    def evaluate(self, t):
        """Entrywise values; ``t`` scalar gives (n, n), array of shape (m,) gives (m, n, n)."""
        n = self.n
        if np.ndim(t) == 0:
            out = np.empty((n, n))
            for i, row in enumerate(self.entries):
                for j, e in enumerate(row):
                    out[i, j] = _expr.evaluate(e, float(t))
            return out
        t = np.asarray(t, dtype=float)
        out = np.empty(t.shape + (n, n))
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                out[..., i, j] = _expr.evaluate(e, t)
        return out

    def derivative(self) -> "Segment":
        d = tuple(tuple(_expr.differentiate(e) for e in row) for row in self.entries)
        return Segment(self.t_start, self.t_end, d)


@dataclass(frozen=True)
class MatrixTrajectory:
    segments: tuple
    period: Optional[float] = None
    jump_tolerance: float = 1e-12
    _derivs: tuple = field(init=False, repr=False, compare=False)
    _starts: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise TrajectoryError("trajectory needs at least one segment")
        if segs[0].t_start != 0.0:
            raise TrajectoryError(f"segments[0]: first segment must start at 0, got {segs[0].t_start}")
        n = segs[0].n
        for k, (a, b) in enumerate(zip(segs, segs[1:]), start=1):
            if b.n != n:
                raise TrajectoryError(f"segments[{k}]: dimension {b.n} differs from {n}")
            if b.t_start < a.t_end:
                raise TrajectoryError(f"segments[{k}]: overlaps previous segment ({b.t_start} < {a.t_end})")
            if b.t_start > a.t_end:
                raise TrajectoryError(f"segments[{k}]: gap after previous segment ({a.t_end} .. {b.t_start})")
        if self.period is not None:
            if not self.period > 0:
                raise TrajectoryError("period must be positive")
            if not math.isclose(segs[-1].t_end, self.period, rel_tol=0, abs_tol=1e-12 * max(1.0, self.period)):
                raise TrajectoryError(
                    f"period {self.period} must equal the defined horizon {segs[-1].t_end}"
                )
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_derivs", tuple(s.derivative() for s in segs))
        object.__setattr__(self, "_starts", tuple(s.t_start for s in segs))

    # ------------------------------------------------------------------
    @classmethod
    def from_entries(cls, boundaries: Sequence[float], entries: Sequence, period=None, **kw):
        """Build from ``k+1`` boundaries and ``k`` entry grids (strings, numbers or expressions)."""
        if len(boundaries) != len(entries) + 1:
            raise TrajectoryError("need one more boundary than entry grids")
        segs = [Segment(float(a), float(b), grid) for a, b, grid in zip(boundaries, boundaries[1:], entries)]
        return cls(tuple(segs), period=period, **kw)

    @classmethod
    def constant(cls, matrix, period: float = 1.0):
        """A constant path; it is periodic with any period, ``period`` only fixes the bookkeeping."""
        m = np.atleast_2d(np.asarray(matrix, dtype=float))
        grid = [[_expr.Num(float(v)) for v in row] for row in m]
        return cls((Segment(0.0, float(period), grid),), period=float(period))

    @classmethod
    def piecewise_constant(cls, boundaries, matrices, period=None):
        grids = [[[_expr.Num(float(v)) for v in row] for row in np.atleast_2d(np.asarray(m, dtype=float))]
                 for m in matrices]
        return cls.from_entries(boundaries, grids, period=period)

    # ------------------------------------------------------------------
    @property
    def n(self) -> int:
        return self.segments[0].n

    @property
    def horizon(self) -> float:
        """End of the defined domain ``T_def``."""
        return self.segments[-1].t_end

    @property
    def boundaries(self) -> list:
        return [s.t_start for s in self.segments] + [self.horizon]

    def _locate(self, t: float, left: bool = False):
        """Return (segment index, local time) for ``t``; ``left`` picks the segment ending at t."""
        if not math.isfinite(t) or t < 0 or (left and t <= 0):
            raise TrajectoryError(f"time {t} outside the domain")
        T = self.horizon
        if self.period is not None:
            k = math.floor(t / T)
            tau = t - k * T
            if tau >= T:  # rounding
                tau -= T
            if left and tau == 0.0:
                return len(self.segments) - 1, T
        else:
            tau = t
            if tau > T or (tau == T and not left):
                raise TrajectoryError(f"time {t} beyond the defined horizon {T}")
        i = bisect.bisect_right(self._starts, tau) - 1
        if left and i > 0 and tau == self._starts[i]:
            i -= 1
        return i, tau

    def value_at(self, t: float) -> np.ndarray:
        i, tau = self._locate(float(t))
        return self.segments[i].evaluate(tau)

    def left_limit(self, t: float) -> np.ndarray:
        i, tau = self._locate(float(t), left=True)
        return self.segments[i].evaluate(tau)

    def derivative_at(self, t: float) -> np.ndarray:
        i, tau = self._locate(float(t))
        if tau == self._starts[i]:
            raise TrajectoryError(f"derivative requested at segment boundary t={t}")
        return self._derivs[i].evaluate(tau)

    def values(self, ts) -> np.ndarray:
        """Right-continuous values on an array of times, shape (m, n, n)."""
        ts = np.asarray(ts, dtype=float)
        out = np.empty(ts.shape + (self.n, self.n))
        if self.period is not None:
            k = np.floor(ts / self.horizon)
            tau = ts - k * self.horizon
            tau = np.where(tau >= self.horizon, tau - self.horizon, tau)
        else:
            if np.any(ts >= self.horizon) or np.any(ts < 0):
                raise TrajectoryError("times outside the defined horizon")
            tau = ts
        if np.any(ts < 0):
            raise TrajectoryError("negative times")
        idx = np.searchsorted(self._starts, tau, side="right") - 1
        for i, seg in enumerate(self.segments):
            mask = idx == i
            if np.any(mask):
                out[mask] = seg.evaluate(tau[mask])
        return out

    # ------------------------------------------------------------------
    def boundaries_in(self, t_a: float, t_b: float) -> list:
        """Segment boundaries (unwrapped over periods) lying in ``(t_a, t_b]``."""
        T = self.horizon
        base = [s.t_start for s in self.segments]
        if self.period is None:
            return [b for b in base[1:] + [T] if t_a < b <= t_b]
        out = []
        k0 = math.floor(t_a / T)
        k1 = math.floor(t_b / T)
        for k in range(k0, k1 + 1):
            for b in base:
                tb = k * T + b
                if t_a < tb <= t_b and tb > 0:
                    out.append(tb)
        return sorted(out)

    def jump_size(self, t: float) -> float:
        return float(np.linalg.norm(self.value_at(t) - self.left_limit(t), 2))

    def is_jump(self, t: float) -> bool:
        if self.period is None and t >= self.horizon:
            return False
        right = self.value_at(t)
        diff = np.linalg.norm(right - self.left_limit(t), 2)
        return diff > self.jump_tolerance * (1.0 + np.linalg.norm(right, 2))

    def jump_set(self, t_a: float, t_b: float) -> list:
        """Jump times in the half-open window ``(t_a, t_b]``."""
        if not 0 <= t_a < t_b:
            raise TrajectoryError("need 0 <= t_a < t_b")
        return [b for b in self.boundaries_in(t_a, t_b) if self.is_jump(b)]

    def smooth_pieces(self, t_a: float, t_b: float) -> list:
        """Split ``[t_a, t_b]`` at every segment boundary; each piece is smooth in its interior."""
        cuts = [t_a] + [b for b in self.boundaries_in(t_a, t_b) if b < t_b] + [t_b]
        return [(a, b) for a, b in zip(cuts, cuts[1:]) if b > a]


# ----------------------------------------------------------------------
# Regularity
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class RegularityReport:
    L: float
    alpha_max: float
    jump_count_per_window: int
    assumption24_suspect: bool
    horizon: float
    periodic: bool
    alpha_variation: float = float("nan")

    def as_dict(self) -> dict:
        return {
            "L": self.L,
            "alpha_max": self.alpha_max,
            "jump_count_per_window": self.jump_count_per_window,
            "assumption24_suspect": self.assumption24_suspect,
            "horizon": self.horizon,
            "periodic": self.periodic,
            "alpha_variation": self.alpha_variation,
        }


def _golden_max(f, a: float, b: float, iters: int = 40) -> float:
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    best = max(fc, fd)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
        best = max(best, fc, fd)
    return best


def _sample_grid(traj: MatrixTrajectory, grid_step: float, t_end: float | None = None):
    """Per-segment grids including each segment start; ends handled as left limits."""
    out = []
    for seg in traj.segments:
        if t_end is not None and seg.t_start >= t_end:
            break
        m = max(2, int(math.ceil((seg.t_end - seg.t_start) / grid_step)))
        out.append((seg, np.linspace(seg.t_start, seg.t_end, m + 1)))
    return out


def _segment_scalar(seg: Segment, ts: np.ndarray, func) -> np.ndarray:
    """Apply ``func`` to A at the grid ``ts`` within ``seg``; the last node is the left limit."""
    mats = seg.evaluate(ts)
    return np.array([func(m) for m in mats])


def _fd_variation(values: np.ndarray) -> float:
    return float(np.sum(np.abs(np.diff(values))))


def check_regularity(traj: MatrixTrajectory, grid_step: float | None = None,
                     cells_per_segment: int = 16) -> RegularityReport:
    """Estimate L and alpha_max and screen alpha(A(t)) for absolute continuity.

    Sampling is dense on each segment (segment ends are evaluated as left
    limits) and followed by golden-section refinement around the sampled
    maxima.  The absolute-continuity screen compares the sampled variation of
    ``alpha(A(t))`` under one factor-2 refinement, both over whole segments
    and over the dyadic end cells of each segment where a non-convergent
    oscillation would pile up.
    """
    from .spectral import abscissa  # local: spectral imports this module

    if grid_step is None:
        grid_step = traj.horizon / 512
    if grid_step <= 0:
        raise TrajectoryError("grid_step must be positive")

    def opnorm(m):
        return float(np.linalg.norm(m, 2))

    L = 0.0
    amax = -math.inf
    suspect = False
    total_var = 0.0
    for seg, ts in _sample_grid(traj, grid_step):
        norms = _segment_scalar(seg, ts, opnorm)
        alphas = _segment_scalar(seg, ts, abscissa)
        for vals, fn, which in ((norms, opnorm, "L"), (alphas, abscissa, "a")):
            k = int(np.argmax(vals))
            lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)]
            refined = _golden_max(lambda s: fn(seg.evaluate(min(max(s, seg.t_start), seg.t_end))), lo, hi)
            best = max(float(vals[k]), refined)
            if which == "L":
                L = max(L, best)
            else:
                amax = max(amax, best)
        # absolute-continuity screen on alpha(A(t))
        fine_ts = np.linspace(ts[0], ts[-1], 2 * (len(ts) - 1) + 1)
        fine = _segment_scalar(seg, fine_ts, abscissa)
        coarse_var = _fd_variation(alphas)
        fine_var = _fd_variation(fine)
        total_var += fine_var
        if _not_converging(coarse_var, fine_var):
            suspect = True
        else:
            suspect = suspect or _end_cells_suspect(seg, len(ts) - 1, abscissa)

    L = L * (1 + 1e-9)
    amax = amax + 1e-9 * max(1.0, abs(amax))
    if traj.period is not None:
        jumps = len(traj.jump_set(0.0, traj.period))
    else:
        jumps = len(traj.jump_set(0.0, traj.horizon)) if traj.horizon > 0 else 0
    return RegularityReport(
        L=L,
        alpha_max=amax,
        jump_count_per_window=jumps,
        assumption24_suspect=suspect,
        horizon=traj.horizon,
        periodic=traj.period is not None,
        alpha_variation=total_var,
    )


def _not_converging(coarse: float, fine: float, floor: float = 1e-9) -> bool:
    return abs(fine - coarse) > 0.1 * max(fine, floor) and abs(fine - coarse) > floor


def _end_cells_suspect(seg: Segment, m: int, func, depth: int = 12) -> bool:
    """Refinement test on dyadic cells shrinking towards both segment ends.

    A path of bounded variation has sampled variation that converges on every
    cell; an oscillation accumulating at an endpoint keeps every cell near that
    endpoint from converging.  Each cell holds ``m`` coarse samples.
    """
    a, b = seg.t_start, seg.t_end
    width = b - a
    for side in (0, 1):
        bad = 0
        for k in range(1, depth + 1):
            w = width / 2 ** k
            lo, hi = (a, a + w) if side == 0 else (b - w, b)
            coarse = _fd_variation(_segment_scalar(seg, np.linspace(lo, hi, m + 1), func))
            fine = _fd_variation(_segment_scalar(seg, np.linspace(lo, hi, 2 * m + 1), func))
            if _not_converging(coarse, fine, floor=1e-12 * (1 + width)):
                bad += 1
        if bad >= depth // 2:
            return True
    return False
