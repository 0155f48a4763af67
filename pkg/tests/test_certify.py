import math

import numpy as np
import pytest

from ltvcert.certify import (
    CertificateParams,
    CertificateViolation,
    CumulativeProfile,
    SwitchingSchedule,
    UnclassifiableModeError,
    certify,
    iss_constants,
    lambda_bound,
    lhs,
    min_rho,
    switched_condition,
    switched_k,
    switched_min_rho,
    xi_from_samples,
    xi_profile,
)
from ltvcert.lyapunov import ConstantsBundle, constants_spectral
from ltvcert.perturbation import PerturbationModel
from ltvcert.trajectory import MatrixTrajectory

TWO_PI = 2 * math.pi
GOLDEN = ConstantsBundle(0.2381, 0.5, 1.0, "spectral")


def test_lhs_ripple(ripple, ripple_pert):
    value = lhs(ripple, ripple_pert, 1.0, GOLDEN, 0.0, TWO_PI)
    assert value == pytest.approx(0.2381 * 2.2 + 0.5 * 0.8 + 0.25 * 2.2, abs=1e-6)
    assert value == pytest.approx(1.4738, abs=1e-3)


def test_lhs_gamma_only():
    hurwitz = MatrixTrajectory.constant(np.array([[-2.0, 0.0], [0.0, -3.0]]))
    pert = PerturbationModel.build("0.1*(abs(cos(t)) + abs(sin(t)))")
    assert lhs(hurwitz, pert, 1.0, GOLDEN, 0.0, TWO_PI) == pytest.approx(0.4, abs=1e-8)
    assert lhs(hurwitz, PerturbationModel.none(), 1.0, GOLDEN, 0.0, 5.0) == 0.0
    with pytest.raises(ValueError):
        lhs(hurwitz, pert, 1.0, GOLDEN, 1.0, 1.0)


def test_lhs_additivity(ripple, ripple_pert):
    a, b, c = 0.3, 5.0, 9.0
    total = lhs(ripple, ripple_pert, 1.0, GOLDEN, a, c)
    assert total == pytest.approx(lhs(ripple, ripple_pert, 1.0, GOLDEN, a, b) + lhs(ripple, ripple_pert, 1.0, GOLDEN, b, c),
                                  abs=1e-8)


def test_profile_matches_direct_lhs(ripple, ripple_pert, ripple_profile):
    H = ripple_profile.H([1.0, 4.0, TWO_PI, 10.0], GOLDEN)
    for t, h in zip([1.0, 4.0, TWO_PI, 10.0], H):
        assert h == pytest.approx(lhs(ripple, ripple_pert, 1.0, GOLDEN, 0.0, t), abs=1e-8)
    # the jump at 2 pi is excluded from the left value
    left = ripple_profile.H([TWO_PI], GOLDEN, left=True)[0]
    assert H[2] - left == pytest.approx(0.25 * 1.1, abs=1e-12)
    assert np.all(np.diff(ripple_profile.H(np.linspace(0, 20, 200), GOLDEN)) >= 0)


def test_lambda_bound():
    assert lambda_bound(GOLDEN) == pytest.approx(0.2381)
    assert lambda_bound(ConstantsBundle(0.3, 0.3, 1.0, "spectral")) == 0.5
    assert lambda_bound(ConstantsBundle(0.5, 1.0, 1.0, "spectral")) == 0.25


def test_iss_constants_example():
    k = ConstantsBundle(0.5, 0.5, 1.0, "spectral")
    iss = iss_constants(CertificateParams(1.0, 0.0, 0.0, 0.5, k))
    assert (iss.a, iss.b, iss.k1, iss.k2) == pytest.approx((1.0, 0.5, 1.0, 0.5))
    assert iss.k3_unscaled == pytest.approx(math.sqrt(0.5))
    assert iss.k3 == pytest.approx(1.0)  # sqrt(b / (a c1))
    iss = iss_constants(CertificateParams(1.0, 0.1, 0.0, 0.1, ConstantsBundle(0.2, 0.4, 1.0, "spectral")))
    assert iss.k1 == math.sqrt(2.0)


def test_iss_constants_ripple_near_degenerate():
    eps = 0.5 * (GOLDEN.c1 / GOLDEN.c2 - 2 * 0.238)
    iss = iss_constants(CertificateParams(1.0, 0.238, 0.0, eps, GOLDEN))
    assert iss.a == pytest.approx(2 - (0.476 + eps) / 0.2381)
    assert 0 < iss.a < 1e-3


def test_params_validation():
    with pytest.raises(ValueError):
        CertificateParams(1.0, 0.3, 0.0, 0.01, GOLDEN)
    with pytest.raises(ValueError):
        CertificateParams(1.0, 0.1, 0.0, 0.9, GOLDEN)
    with pytest.raises(ValueError):
        CertificateParams(1.0, 0.1, -1.0, 0.1, GOLDEN)


def test_min_rho_constant_hurwitz():
    traj = MatrixTrajectory.constant(-np.eye(2))
    prof = CumulativeProfile(traj, PerturbationModel.none(), 1.0)
    k = ConstantsBundle(0.5, 0.5, 1.0, "spectral")
    assert min_rho(prof, k, 0.2).rho == 0.0


def test_min_rho_ripple(ripple_profile):
    r = min_rho(ripple_profile, GOLDEN, 0.238)
    assert 0 < r.rho < math.inf
    assert math.isinf(min_rho(ripple_profile, GOLDEN, 0.2).rho)


def test_min_rho_monotone(ripple_profile):
    rhos = [min_rho(ripple_profile, GOLDEN, lam).rho for lam in (0.235, 0.236, 0.237, 0.238)]
    assert all(a >= b for a, b in zip(rhos, rhos[1:]))


def test_min_rho_monotone_in_horizon():
    traj = MatrixTrajectory.from_entries([0, 5], [[["0.3*sin(2*t) - 1.2", "1"], ["0", "-2"]]])
    prof = CumulativeProfile(traj, PerturbationModel.build("0.05"), 1.0)
    k = constants_spectral(traj, 1.0)
    short = min_rho(prof, k, 0.01, horizon=2.0).rho
    long = min_rho(prof, k, 0.01, horizon=5.0).rho
    assert long >= short


def test_min_rho_covers_every_window(ripple, ripple_pert, ripple_profile):
    lam = 0.237
    rho = min_rho(ripple_profile, GOLDEN, lam).rho
    rng = np.random.default_rng(0)
    for _ in range(30):
        a, b = sorted(rng.uniform(0, 5 * TWO_PI, 2))
        assert lhs(ripple, ripple_pert, 1.0, GOLDEN, a, b) <= lam * (b - a) + rho


def test_certify_ripple(ripple, ripple_pert, ripple_profile):
    cert = certify(ripple, ripple_pert, 1.0, GOLDEN, lam=0.238, profile=ripple_profile)
    assert cert.feasible
    assert cert.reference["lhs"] == pytest.approx(1.4738, abs=1e-3)
    assert cert.reference["rhs"] == pytest.approx(1.4954, abs=1e-3)
    assert cert.a > 0 and cert.k2 > 0
    assert any("close to zero" in n for n in cert.notes)
    scanned = certify(ripple, ripple_pert, 1.0, GOLDEN, profile=ripple_profile)
    assert scanned.feasible and scanned.lam < lambda_bound(GOLDEN)


def test_certify_constant_hurwitz():
    traj = MatrixTrajectory.constant(np.array([[-1.0, 0.5], [0.0, -2.0]]))
    k = constants_spectral(traj, 1.0)
    cert = certify(traj, PerturbationModel.none(), 1.0, k, lam=0.01)
    assert cert.feasible and cert.rho == 0.0
    assert cert.k1 == pytest.approx(math.sqrt(k.c2 / k.c1))
    assert cert.reference["lhs"] == 0.0


def test_certify_constant_unstable_is_infeasible():
    traj = MatrixTrajectory.constant(np.array([[1.0, 0.0], [0.0, -1.0]]))
    k = constants_spectral(traj, 1.0)
    bound = lambda_bound(k)
    for lam in np.linspace(-0.5, bound * 0.999, 7):
        assert not certify(traj, PerturbationModel.none(), 1.0, k, lam=float(lam)).feasible
    assert not certify(traj, PerturbationModel.none(), 1.0, k).feasible


def test_certify_rho_budget(ripple, ripple_pert, ripple_profile):
    tight = certify(ripple, ripple_pert, 1.0, GOLDEN, lam=0.238, rho=0.0, profile=ripple_profile)
    assert not tight.feasible
    loose = certify(ripple, ripple_pert, 1.0, GOLDEN, lam=0.238, rho=1.0, profile=ripple_profile)
    assert loose.feasible and loose.rho == 1.0


def test_periodic_requires_periodic_envelope(ripple):
    with pytest.raises(ValueError, match="period"):
        CumulativeProfile(ripple, PerturbationModel.build("0.1*abs(sin(t/3))"), 1.0)


def test_xi_examples():
    ts = np.linspace(0, 5, 11)
    xi = xi_from_samples(ts, np.zeros_like(ts), 0.3, 0.7)
    np.testing.assert_allclose(xi, 0.7)
    with pytest.raises(CertificateViolation):
        xi_from_samples(ts, 2 * ts, 0.1, 0.0)


def test_xi_ripple_sandwich(ripple, ripple_pert, ripple_profile):
    cert = certify(ripple, ripple_pert, 1.0, GOLDEN, lam=0.238, profile=ripple_profile)
    ts, xi = xi_profile(ripple_profile, GOLDEN, cert.lam, cert.rho, per_base=2048)
    assert xi[0] == cert.rho
    assert xi.min() >= -1e-9 and xi.max() <= cert.rho + 1e-9


# switched systems -------------------------------------------------------

MODES = [np.array([[-1.5, 0.5], [0.0, -2.0]]), np.array([[0.2, 1.0], [-1.0, 0.2]])]


def test_switch_counting():
    s = SwitchingSchedule((0.0, 1.0, 10.0), (1, 0), period=10.0)
    assert s.switch_count(0.0, 10.0) == 2
    assert s.switch_count(0.5, 9.0) == 1
    assert s.active_time(0.0, 10.0, [1]) == pytest.approx(1.0)
    assert s.active_time(0.0, 25.0, [1]) == pytest.approx(3.0)
    assert s.mode_at(10.5) == 1


def test_switched_never_unstable():
    s = SwitchingSchedule((0.0, 10.0), (0,), period=10.0)
    k = ConstantsBundle(0.2, 0.5, 1.0, "spectral")
    holds, value = switched_condition(MODES, s, 1.0, 0.2, k, 0.1, 0.0, 0.0, 30.0)
    assert holds and value == 0.0


def test_switched_direct_summation():
    s = SwitchingSchedule((0.0, 1.0, 10.0), (1, 0), period=10.0)
    k = ConstantsBundle(0.2, 0.5, 1.0, "spectral")
    kk = switched_k(MODES, 1.0)
    holds, value = switched_condition(MODES, s, 1.0, 0.2, k, 0.15, 0.5, 0.0, 10.0)
    want = 0.2 * 1.2 * 1.0 + 2 * 0.25 * kk
    assert value == pytest.approx(want)
    assert holds == (want <= 10 * 0.15 + 0.5)


def test_switched_k_covers_shifted_jumps():
    A = [np.diag([0.5, -3.0]), np.diag([0.0, -2.5])]
    plain = np.linalg.norm(A[0] - A[1], 2)
    assert plain == pytest.approx(0.5)
    assert switched_k(A, 1.0) == pytest.approx(1.0)


def test_unclassifiable_mode():
    s = SwitchingSchedule((0.0, 1.0), (0,))
    with pytest.raises(UnclassifiableModeError):
        switched_condition([np.eye(2)], s, 1.0, 0.2, GOLDEN, 0.1, 0.0, 0.0, 1.0)


def test_switched_min_rho_infeasible_when_unstable_heavy():
    s = SwitchingSchedule((0.0, 9.0, 10.0), (1, 0), period=10.0)
    traj = s.to_trajectory(MODES)
    k = constants_spectral(traj, 1.0)
    assert math.isinf(switched_min_rho(MODES, s, 1.0, 0.2, k, 0.9 * lambda_bound(k)))
