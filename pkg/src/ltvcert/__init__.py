"""Stability certificates for perturbed linear time-varying systems with jumps.

Typical use::

    from ltvcert import MatrixTrajectory, PerturbationModel, constants_spectral
    from ltvcert.certify import certify

    traj = MatrixTrajectory.from_entries([0, 1], [[["-1", "t"], ["0", "-2"]]], period=1.0)
    consts = constants_spectral(traj, kappa=1.0)
    cert = certify(traj, PerturbationModel.none(), 1.0, consts)
"""
from .certify import (
    Certificate,
    CertificateParams,
    CumulativeProfile,
    SwitchingSchedule,
    iss_constants,
    lambda_bound,
    lhs,
    min_rho,
    switched_condition,
    xi_profile,
)
from .expr import differentiate, evaluate, parse
from .lyapunov import ConstantsBundle, constants_formula, constants_spectral, expm, solve_lyapunov
from .perturbation import PerturbationModel
from .simulate import integrate, monitor_W, verify_iss
from .spectral import ShiftedTrajectory, abscissa, eigenvalues, phi_kappa
from .trajectory import MatrixTrajectory, Segment, check_regularity
from .variation import tv_A, tv_oracle, tv_phi, tv_tilde

__version__ = "0.1.0"

__all__ = [
    "Certificate", "CertificateParams", "CumulativeProfile", "SwitchingSchedule",
    "iss_constants", "lambda_bound", "lhs", "min_rho", "switched_condition", "xi_profile",
    "differentiate", "evaluate", "parse", "ConstantsBundle", "constants_formula",
    "constants_spectral", "expm", "solve_lyapunov", "PerturbationModel", "integrate",
    "monitor_W", "verify_iss", "ShiftedTrajectory", "abscissa", "eigenvalues", "phi_kappa",
    "MatrixTrajectory", "Segment", "check_regularity", "tv_A", "tv_oracle", "tv_phi", "tv_tilde",
]
