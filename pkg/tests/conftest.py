import math
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from corpus import corpus, ripple_perturbation, ripple_trajectory  # noqa: E402

ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def ripple():
    return ripple_trajectory()


@pytest.fixture(scope="session")
def ripple_pert():
    return ripple_perturbation()


@pytest.fixture(scope="session")
def ripple_constants(ripple):
    from ltvcert.lyapunov import constants_spectral

    return constants_spectral(ripple, 1.0)


@pytest.fixture(scope="session")
def ripple_profile(ripple, ripple_pert):
    from ltvcert.certify import CumulativeProfile

    return CumulativeProfile(ripple, ripple_pert, 1.0)


@pytest.fixture(scope="session")
def certified_corpus():
    """Corpus systems with their constants, profile and certificate (scan mode)."""
    from ltvcert.certify import CumulativeProfile, certify
    from ltvcert.lyapunov import constants_spectral

    out = []
    for s in corpus():
        k = constants_spectral(s.traj, s.kappa)
        prof = CumulativeProfile(s.traj, s.pert, s.kappa)
        cert = certify(s.traj, s.pert, s.kappa, k, profile=prof)
        out.append((s, k, prof, cert))
    return out


TWO_PI = 2 * math.pi


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
