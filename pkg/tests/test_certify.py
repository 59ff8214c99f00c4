import math

import numpy as np
import pytest

from conftest import ACCEL_PAIRS
from symadmm.admm import initial_state, step
from symadmm.certify import (CERT_RTOL, IDENTITY_RTOL, RateBounds, check_fejer, check_hpe, check_rates,
                             estimate_d0, eta_k, quadratic_eps_gap, rate_constants, splitting_vectors,
                             structural_errors)
from symadmm.linop import dense_spd, materialize
from symadmm.qp import kkt_solution, make_qp
from symadmm.region import AccelParams, CertificateScalars, certificate_scalars
from symadmm.tvapp import assemble_tv_problem, make_instance


# -- d0 ------------------------------------------------------------------------

def test_d0_matches_kkt_distance(qp6, qp6_reference):
    problem, data = qp6
    params = AccelParams.with_default_tolerance(0.8, 1.12)
    z_star = np.concatenate(kkt_solution(data))
    M = materialize(problem.metric(params))
    expected = float(z_star @ M @ z_star)
    est = estimate_d0(problem, params, reference=qp6_reference)
    assert est.converged
    assert est.d0 == pytest.approx(expected, rel=1e-6)


def test_d0_zero_when_started_at_solution(qp6):
    problem, data = qp6
    z_star = np.concatenate(kkt_solution(data))
    est = estimate_d0(problem, AccelParams(0, 1), z0=z_star, tol=1e-12, budget=100)
    assert est.d0 <= 1e-12


# -- scalar pieces -------------------------------------------------------------

def test_eta_hand_example():
    params = AccelParams(0.5, 1.0)
    certs = certificate_scalars(params, 2.0, 1.0, sigma=0.9)
    q = np.array([1.0, 2.0])
    H = dense_spd(np.diag([2.0, 0.0]))
    dy = np.array([1.0, 5.0])
    # phi_tilde / ((tau+theta) beta) * 5 + phi / ((tau+theta)(1+tau)) * 2
    expected = certs.phi_tilde / 1.5 * 5.0 + certs.phi / (1.5 * 1.5) * 2.0
    assert eta_k(certs, q, dy, H, params) == pytest.approx(expected, rel=1e-14)
    assert eta_k(certs, np.zeros(2), None, H, params) == 0.0


def test_certificate_scalars_positive_for_every_pair():
    for pair in ACCEL_PAIRS:
        params = AccelParams.with_default_tolerance(*pair)
        c = certificate_scalars(params, 3.0, 2.0)
        assert 0 <= c.sigma < 1
        assert c.phi >= 0 and c.phi_tilde >= 0 and c.vartheta > 0
        assert c.C1 > 0 and c.C2 >= 1 and c.C3 > 0 and c.eta0 >= 0


def test_rate_bounds_decrease_in_k():
    b = RateBounds(C1=3.0, C2=2.0, C3=5.0, lambda_M=4.0, d0=0.5)
    assert b.pointwise(1) == pytest.approx(math.sqrt(2 * 4 * 0.5 * 3))
    assert b.ergodic_residual(2) == pytest.approx(math.sqrt(4 * 0.5 * 2))
    assert b.ergodic_eps(3) == pytest.approx(3 * 0.5 * 5 / 6)
    ks = np.arange(1, 50)
    for fn in (b.pointwise, b.ergodic_residual, b.ergodic_eps):
        vals = [fn(k) for k in ks]
        assert all(a > c for a, c in zip(vals, vals[1:]))


def test_rate_constants_reject_sigma_one():
    c = certificate_scalars(AccelParams(0, 1), 1.0, 1.0)
    bad = CertificateScalars(**{**c.__dict__, "sigma": 1.0})
    with pytest.raises(ValueError):
        rate_constants(bad)


def test_check_hpe_identity_metric():
    M = dense_spd(np.eye(2))
    slack, lhs, rhs = check_hpe(np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([1.0, 1.0]),
                                0.5, 0.25, 0.5, M)
    # lhs = ||(0,1)||^2 + 0.25, rhs = 0.5 * 2 + 0.5
    assert (lhs, rhs, slack) == pytest.approx((1.25, 1.5, 0.25))


def test_check_fejer_and_rates_examples():
    M = dense_spd(np.eye(1))
    slacks, values = check_fejer(np.zeros(1), [np.array([3.0]), np.array([2.0]), np.array([2.5])],
                                 [0.0, 0.0, 0.0], M)
    assert values == [9.0, 4.0, 6.25]
    assert slacks == [5.0, -2.25]
    b = RateBounds(1.0, 1.0, 1.0, 1.0, 1.0)
    trace = [{"max_res": 1.0, "erg_res": 0.1, "eps": 0.0, "zeta": 0.0},
             {"max_res": 5.0, "erg_res": 0.1, "eps": 2.0, "zeta": 0.0}]
    flags = check_rates(trace, b)
    # the pointwise bound applies to the running minimum, so the k=2 spike is fine
    assert flags[0]["pointwise"] and flags[1]["pointwise"]
    assert not flags[1]["ergodic_eps"]


def test_quadratic_eps_gap_is_eps_subgradient_test(rng):
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    r = np.array([1.0, -1.0])
    f = lambda x: 0.5 * x @ P @ x - r @ x  # noqa: E731
    xb = rng.standard_normal(2)
    assert quadratic_eps_gap(P, r, xb, P @ xb - r, 0.0) == pytest.approx(0.0, abs=1e-14)
    for _ in range(20):
        v = rng.standard_normal(2) * 2
        eps = rng.uniform(0, 2)
        gap = quadratic_eps_gap(P, r, xb, v, eps)
        # brute force: eps-subgradient iff min_x f(x) - f(xb) - <v, x - xb> >= -eps
        xs = np.linalg.solve(P, r + v)
        worst = f(xs) - f(xb) - v @ (xs - xb)
        assert gap == pytest.approx(worst + eps, abs=1e-12)


# -- structural identities (exact and inexact runs) ----------------------------

def _structural_worst(problem, params, iters):
    state = initial_state(problem)
    worst = 0.0
    for _ in range(iters):
        new = step(state, problem, params)
        errs = structural_errors(state, new, problem, params)
        worst = max(worst, max(errs.values()))
        state = new
    return worst


@pytest.mark.parametrize("pair", ACCEL_PAIRS)
def test_identities_qp_exact_and_inexact(pair):
    for exact in (True, False):
        problem, _ = make_qp(n=6, p=4, m=4, seed=0, exact=exact)
        params = AccelParams(*pair) if exact else AccelParams.with_default_tolerance(*pair)
        assert _structural_worst(problem, params, 60) <= IDENTITY_RTOL


@pytest.mark.parametrize("pair", [(0.0, 1.0), (0.8, 1.12)])
def test_identities_tv_exact(pair, tv32_prox):
    inst, problem = tv32_prox
    assert _structural_worst(problem, AccelParams(*pair), 15) <= IDENTITY_RTOL


def test_splitting_vectors_definition(qp6):
    problem, data = qp6
    params = AccelParams(0.3, 1.2)
    s0 = initial_state(problem)
    s1 = step(s0, problem, params)
    s2 = step(s1, problem, params)
    pq = splitting_vectors(s1, s2, problem, params.beta)
    assert np.allclose(pq.p, data.B @ (s2.y - s1.y), atol=1e-13)
    assert np.allclose(pq.q, -params.beta * (data.A @ s2.x_tilde + data.B @ s2.y - data.b), atol=1e-13)
    # gamma~_k - gamma_{k-1} = beta p_k + q_k
    assert np.allclose(s2.gamma_tilde - s1.gamma, params.beta * pq.p + pq.q, atol=1e-12)


# -- full certificate suite ----------------------------------------------------

def _assert_certified(runs):
    for pair, (params, rep, mon) in runs.items():
        assert rep.converged, pair
        assert mon.violations() == [], (pair, mon.violations()[:5])
        assert len(mon.records) == rep.outer


def test_certificates_qp(qp6_certified):
    _assert_certified(qp6_certified)


def test_certificates_tv32(tv32_certified):
    _assert_certified(tv32_certified)


def test_certificate_records_have_margin(tv32_certified):
    # the checks are not passing by a rounding hair
    for params, rep, mon in tv32_certified.values():
        assert min(r["hpe_slack"] for r in mon.records) > -CERT_RTOL
        assert all(r["eps"] >= -1e-10 and r["zeta"] >= -1e-10 for r in mon.records)


def test_monitor_flags_a_broken_certificate(qp6, qp6_reference):
    from symadmm.admm import solve
    from symadmm.certify import CertificateMonitor

    problem, _ = qp6
    params = AccelParams.with_default_tolerance(0.0, 1.0)
    mon = CertificateMonitor(reference=qp6_reference)
    solve(problem, params, tol=1e-6, max_outer=500, monitors=[mon])
    # shrink d0 a thousandfold: the rate bounds become too tight and must fail
    mon.bounds = RateBounds(mon.bounds.C1, mon.bounds.C2, mon.bounds.C3, mon.bounds.lambda_M,
                            mon.bounds.d0 * 1e-6)
    assert any("bound violated" in v for v in mon.violations())


def test_unconverged_reference_is_a_warning(qp6):
    from symadmm.certify import CertificateMonitor, reference_solution

    ref = reference_solution(qp6[0], tol=1e-14, budget=3)
    assert not ref.converged
    mon = CertificateMonitor(reference=ref)
    mon.start(qp6[0], AccelParams(0, 1), initial_state(qp6[0]))
    assert mon.warnings and "approximation" in mon.warnings[0]
