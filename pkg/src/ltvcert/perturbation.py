"""Perturbation envelopes and optional explicit perturbation maps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import expr as _expr
from .expr import Expression

__all__ = ["PerturbationModel", "ModelInconsistencyError"]


class ModelInconsistencyError(ValueError):
    """An explicit perturbation map leaves its declared envelope."""


def _coerce(e, variables=("t",)) -> Expression:
    if isinstance(e, Expression):
        return e
    if isinstance(e, (int, float)):
        return _expr.Num(float(e))
    return _expr.parse(str(e), variables)


@dataclass(frozen=True)
class PerturbationModel:
    """Envelope ``|g(t, x)| <= gamma(t) |x| + delta(t)`` and, optionally, ``g`` itself.

    ``g_explicit`` holds one expression per state component, over ``t`` and
    ``x1..xn``.
    """

    gamma: Expression = _expr.Num(0.0)
    delta: Expression = _expr.Num(0.0)
    g_explicit: Optional[tuple] = None

    @classmethod
    def build(cls, gamma="0", delta="0", g: Optional[Sequence[str]] = None) -> "PerturbationModel":
        g_expr = None
        if g is not None:
            names = ("t",) + tuple(f"x{i + 1}" for i in range(len(g)))
            g_expr = tuple(_coerce(s, names) for s in g)
        return cls(_coerce(gamma), _coerce(delta), g_expr)

    @classmethod
    def none(cls) -> "PerturbationModel":
        return cls()

    @property
    def is_zero_gamma(self) -> bool:
        return isinstance(self.gamma, _expr.Num) and self.gamma.value == 0.0

    @property
    def is_zero_delta(self) -> bool:
        return isinstance(self.delta, _expr.Num) and self.delta.value == 0.0

    def gamma_at(self, t):
        return _expr.evaluate(self.gamma, t)

    def delta_at(self, t):
        return _expr.evaluate(self.delta, t)

    def g(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.g_explicit is None:
            return np.zeros_like(x)
        env = {f"x{i + 1}": float(v) for i, v in enumerate(x)}
        return np.array([_expr.evaluate(e, float(t), **env) for e in self.g_explicit])

    def check_bound(self, t: float, x: np.ndarray, rel_tol: float = 1e-9) -> None:
        """Raise ModelInconsistencyError when ``g(t, x)`` exceeds the envelope."""
        if self.g_explicit is None:
            return
        gn = float(np.linalg.norm(self.g(t, x)))
        bound = self.gamma_at(float(t)) * float(np.linalg.norm(x)) + self.delta_at(float(t))
        if gn > bound * (1 + rel_tol) + 1e-300:
            raise ModelInconsistencyError(
                f"|g(t,x)| = {gn:.6g} exceeds gamma|x| + delta = {bound:.6g} at t={t:.6g}"
            )

    def check_periodic(self, period: float, samples: int = 64) -> bool:
        """Whether gamma and delta repeat with ``period`` (checked on a sample grid)."""
        ts = np.linspace(0.0, period, samples, endpoint=False)
        for e in (self.gamma, self.delta):
            a = np.atleast_1d(_expr.evaluate(e, ts))
            b = np.atleast_1d(_expr.evaluate(e, ts + period))
            if not np.allclose(a, b, rtol=1e-9, atol=1e-12):
                return False
        return True
