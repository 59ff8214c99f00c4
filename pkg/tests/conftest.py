import numpy as np
import pytest

from symadmm.certify import reference_solution
from symadmm.qp import make_qp
from symadmm.tvapp import assemble_tv_problem, make_instance

ACCEL_PAIRS = [(0.0, 1.0), (0.0, 1.6), (0.9, 1.0), (0.8, 1.12)]
TV_SIGMA_HAT = 1.0 - 1e-8


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def qp6():
    """6-dim QP fixture (n=6, p=4, m=4) with quadratic g."""
    return make_qp(n=6, p=4, m=4, seed=0)


@pytest.fixture(scope="session")
def qp6_reference(qp6):
    return reference_solution(qp6[0], tol=1e-12, budget=20_000)


@pytest.fixture(scope="session")
def tv32():
    inst = make_instance(32)
    return inst, assemble_tv_problem(inst.spec, inst.degraded)


@pytest.fixture(scope="session")
def tv32_prox():
    inst = make_instance(32)
    return inst, assemble_tv_problem(inst.spec, inst.degraded, proximal_system=True)


@pytest.fixture(scope="session")
def tv32_reference(tv32):
    return reference_solution(tv32[1], tol=1e-9, budget=6000, beta=30.0)


def _certified(problem, reference, pairs, sigma_hat, tol, max_outer):
    from symadmm.admm import solve
    from symadmm.certify import CertificateMonitor
    from symadmm.region import AccelParams

    out = {}
    for pair in pairs:
        params = AccelParams.with_default_tolerance(*pair, sigma_hat=sigma_hat)
        mon = CertificateMonitor(reference=reference)
        rep = solve(problem, params, tol=tol, max_outer=max_outer, monitors=[mon])
        out[pair] = (params, rep, mon)
    return out


@pytest.fixture(scope="session")
def qp6_certified(qp6, qp6_reference):
    """Certificate-monitored runs of the QP fixture for every acceleration pair."""
    return _certified(qp6[0], qp6_reference, ACCEL_PAIRS, 0.0, 1e-8, 5000)


@pytest.fixture(scope="session")
def tv32_certified(tv32, tv32_reference):
    """Certificate-monitored 32x32 TV runs for every acceleration pair."""
    return _certified(tv32[1], tv32_reference, ACCEL_PAIRS, TV_SIGMA_HAT, 1e-2, 2000)


@pytest.fixture(scope="session")
def tv64_restorations():
    """The 64x64 trend instance restored with every acceleration pair (default sigma_tilde)."""
    from symadmm.region import AccelParams
    from symadmm.tvapp import restore

    inst = make_instance(64)
    return {pair: restore(inst, AccelParams.with_default_tolerance(*pair, sigma_hat=TV_SIGMA_HAT),
                          tol=1e-2, max_outer=2000)
            for pair in ACCEL_PAIRS}
