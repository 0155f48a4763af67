import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ltvcert.spectral import ShiftedTrajectory, abscissa, eigenvalues, phi_kappa, ramp, shifted_value

TWO_PI = 2 * math.pi


@pytest.mark.parametrize(
    "M, want",
    [
        ([[0, 1], [-1, 0]], 0.0),
        ([[0.1, 1], [-1, 0.1]], 0.1),
        ([[-1, 1], [-1, -1]], -1.0),
        ([[3.0]], 3.0),
    ],
)
def test_abscissa_examples(M, want):
    assert abscissa(M) == pytest.approx(want, abs=1e-14)


def test_ramp():
    assert ramp(-3) == 0 and ramp(0) == 0 and ramp(1.1) == 1.1


def test_phi_kappa():
    assert phi_kappa([[0.1, 1], [-1, 0.1]], 1.0) == pytest.approx(1.1)
    assert phi_kappa(np.diag([-2.0, -3.0]), 1.0) == 0.0
    assert phi_kappa(np.diag([0.1, -3.0]), 0.5) == pytest.approx(0.6)
    with pytest.raises(ValueError):
        phi_kappa(np.eye(2), 0.0)


def test_shifted_values(ripple):
    np.testing.assert_allclose(shifted_value(ripple, 1.0, 0.0), [[-1, 1], [-1, -1]], atol=1e-14)
    sh = ShiftedTrajectory(ripple, 1.0)
    np.testing.assert_allclose(sh.left_limit(TWO_PI), [[-2.1, 1], [-1, -2.1]], atol=1e-12)
    H = np.array([[-3.0, 1.0], [0.0, -2.0]])
    np.testing.assert_array_equal(sh.shift_matrix(H), H)


def test_shifted_abscissa_bound(ripple):
    sh = ShiftedTrajectory(ripple, 1.0)
    for M in sh.values(np.linspace(0, TWO_PI, 300, endpoint=False)):
        assert abscissa(M) <= -1.0 + 1e-9


def test_matches_numpy_on_random_matrices():
    rng = np.random.default_rng(5)
    for _ in range(300):
        n = int(rng.integers(1, 9))
        M = rng.normal(size=(n, n)) * rng.uniform(0.1, 10)
        got = np.sort_complex(eigenvalues(M))
        want = np.sort_complex(np.linalg.eigvals(M))
        assert abscissa(M) == pytest.approx(want.real.max(), abs=1e-9 * (1 + np.abs(M).max()))
        assert np.allclose(np.sort(got.real), np.sort(want.real), atol=1e-8 * (1 + np.abs(M).max()))


def _cubic_oracle(M):
    c = np.poly(M)  # characteristic polynomial coefficients
    return np.roots(c).real.max()


matrices = arrays(np.float64, st.sampled_from([(2, 2), (3, 3)]),
                  elements=st.floats(-5, 5, allow_nan=False, allow_infinity=False))


@settings(max_examples=200, deadline=None)
@given(matrices, st.floats(-3, 3))
def test_shift_equivariance(M, sigma):
    n = M.shape[0]
    assert abscissa(M - sigma * np.eye(n)) == pytest.approx(abscissa(M) - sigma, abs=1e-8 * (1 + np.abs(M).max()))


@settings(max_examples=200, deadline=None)
@given(matrices)
def test_characteristic_polynomial_oracle(M):
    # defective cases make root finding itself ill-conditioned; compare loosely there
    want = _cubic_oracle(M)
    tol = 1e-8 if np.min(np.abs(np.diff(np.sort_complex(np.linalg.eigvals(M))))) > 1e-3 else 1e-4
    assert abscissa(M) == pytest.approx(want, abs=tol * (1 + np.abs(M).max()))


@settings(max_examples=100, deadline=None)
@given(matrices, st.floats(0.01, 3), st.floats(0.01, 3))
def test_phi_monotone_in_kappa(M, k1, k2):
    lo, hi = sorted((k1, k2))
    assert phi_kappa(M, lo) <= phi_kappa(M, hi)
