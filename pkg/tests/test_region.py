import math

import numpy as np
import pytest

from symadmm.linop import DenseOperator, Identity, Zero, dense_spd, materialize
from symadmm.region import (AccelParams, RegionError, build_M, build_Q, certificate_scalars, in_region,
                            lambda_max, phi_family, region_violations, select_sigma, sigma_tilde_default,
                            theta_upper, vartheta)

# published (tau, theta) -> sigma_tilde values of the numerical experiments
PUBLISHED_SIGMA = [((0, 1), 0.990), ((0, 1.6), 0.062), ((0.9, 1), 0.099), ((0.7, 1.12), 0.175),
               ((0.7, 1.15), 0.142), ((0.7, 1.18), 0.107), ((0.8, 1.12), 0.074), ((0.8, 1.15), 0.040)]


def in_published_K(tau, theta):
    return tau <= 1 and tau + theta > 0 and 1 + tau + theta - tau * theta - tau**2 - theta**2 > 0


def random_region_points(rng, count):
    pts = []
    while len(pts) < count:
        tau, theta = rng.uniform(-1, 1), rng.uniform(0, 2)
        if in_region(tau, theta, 0.0):
            st = sigma_tilde_default(tau, theta) if -tau < theta < theta_upper(tau) else 0.0
            st = rng.uniform(0, 1) * st
            if in_region(tau, theta, st):
                pts.append((tau, theta, st))
    return pts


def test_in_region_examples():
    assert in_region(0, 1, 0)
    assert in_region(0.8, 1.12, 0.074)
    assert not in_region(0, 1.7, 0)
    third = 1 * (2 - 0 - 1.7 - 0) - (1 - 1.7) ** 2 * (1 - 0 - 0)
    assert math.isclose(third, -0.19)


def test_region_violations_name_conditions():
    assert region_violations(1.0, 1.0, 0.0) == ["tau < 1 - sigma_tilde",
                                                "(1-tau^2)(2-tau-theta-sigma_tilde) - (1-theta)^2(1-tau-sigma_tilde) > 0"]
    assert region_violations(0.0, -0.5, 0.0)[0] == "tau + theta > 0"
    assert region_violations(0, 1, 1.0)[:2] == ["0 <= sigma_tilde < 1", "tau < 1 - sigma_tilde"]


@pytest.mark.parametrize("pair,expected", PUBLISHED_SIGMA)
def test_sigma_tilde_default_matches_published_values(pair, expected):
    assert round(sigma_tilde_default(*pair), 3) == expected


def test_sigma_tilde_default_range_and_errors():
    rng = np.random.default_rng(3)
    for _ in range(200):
        tau = rng.uniform(-0.99, 0.99)
        theta = rng.uniform(-tau, theta_upper(tau))
        val = sigma_tilde_default(tau, theta)
        assert 0 < val <= 0.99 + 1e-15
    with pytest.raises(RegionError):
        sigma_tilde_default(1.0, 1.0)
    with pytest.raises(RegionError):
        sigma_tilde_default(0.0, 1.7)


def test_region_agrees_with_published_set():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        tau, theta = rng.uniform(-1, 1), rng.uniform(0, 2)
        assert in_region(tau, theta, 0.0) == (in_published_K(tau, theta) and tau < 1)


def test_phi_family_examples():
    assert phi_family(1, 0, 1, 0) == (1, 1, 1, 1)
    phi, phi_hat, _, _ = phi_family(1, 0.9, 1, 0.099)
    assert abs(phi - 0.0019) < 1e-6 and abs(phi_hat - 0.0019) < 1e-6
    assert phi_family(0, 0, 1, 0) == (0, -1, 0, 0)


def test_phi_bar_definition(rng):
    for _ in range(20):
        s, t, th, st = rng.uniform(0, 1), rng.uniform(-0.9, 0.9), rng.uniform(0.1, 1.5), rng.uniform(0, 0.1)
        phi, phi_hat, phi_tilde, phi_bar = phi_family(s, t, th, st)
        assert math.isclose(phi_bar, ((1 + t) * phi_hat - 2 * t * phi) * (1 + t) * phi_tilde
                            - (1 - th) ** 2 * phi**2, rel_tol=1e-12, abs_tol=1e-14)


def test_select_sigma_examples():
    assert abs(select_sigma(0, 1, 0, 0) - 0.5) < 1e-3
    s = select_sigma(0, 1, 0.99, 0.99)
    assert 0.995 <= s < 1


def test_select_sigma_on_random_region_points():
    rng = np.random.default_rng(7)
    for tau, theta, st in random_region_points(rng, 100):
        sh = rng.uniform(0, 0.9)
        s = select_sigma(tau, theta, st, sh)
        assert sh <= s < 1
        phi, phi_hat, phi_tilde, phi_bar = phi_family(s, tau, theta, st)
        assert phi >= 0 and phi_hat >= 0 and phi_tilde > 0 and phi_bar >= 0


def test_select_sigma_requires_region():
    with pytest.raises(RegionError):
        select_sigma(0, 1.7, 0, 0)


def test_vartheta_examples():
    assert math.isclose(vartheta(0, 1, 0), 1.0)
    assert abs(vartheta(0.9, 1.0, 0.099) - 0.4385) < 1e-3
    rng = np.random.default_rng(5)
    for tau, theta, st in random_region_points(rng, 100):
        assert vartheta(tau, theta, st) > 0


def test_build_Q():
    Q = build_Q(AccelParams(0, 1))
    assert np.array_equal(Q, [[3, 2], [2, 3]])
    assert np.allclose(np.linalg.eigvalsh(Q), [1, 5])
    rng = np.random.default_rng(11)
    for tau, theta, st in random_region_points(rng, 100):
        beta = rng.uniform(0.1, 10)
        Q = build_Q(AccelParams(tau, theta, st, 0, beta))
        assert np.linalg.det(Q) > 0 and np.trace(Q) > 0
        vt = vartheta(tau, theta, st)
        for _ in range(10):
            y, g = rng.standard_normal(2)
            v = np.array([y, g])
            assert v @ Q @ v >= -2 * vt * y * g - 1e-12


def test_build_M_standard_case():
    M = build_M(Identity(3), Zero(3), Identity(3), AccelParams(0, 1))
    assert np.allclose(materialize(M), np.eye(9))
    G = dense_spd(np.diag([1.0, 2.0]))
    M = build_M(G, Zero(3), DenseOperator(np.ones((4, 3))), AccelParams(0.5, 1.0))
    x = np.array([1.0, -2.0])
    assert np.allclose(M.apply(np.concatenate((x, np.zeros(7)))), np.concatenate((G.apply(x), np.zeros(7))))


def test_build_M_symmetric_psd_on_random_points():
    rng = np.random.default_rng(9)
    for tau, theta, st in random_region_points(rng, 100):
        n, p, m = rng.integers(1, 4, size=3)
        Bm = rng.standard_normal((m, p))
        Hm = rng.standard_normal((p, p))
        Hm = Hm @ Hm.T * rng.integers(0, 2)
        Gm = rng.standard_normal((n, n))
        Gm = Gm @ Gm.T + 0.1 * np.eye(n)
        params = AccelParams(tau, theta, st, 0, rng.uniform(0.1, 5))
        Mm = materialize(build_M(dense_spd(Gm), dense_spd(Hm), DenseOperator(Bm), params))
        assert np.allclose(Mm, Mm.T, rtol=0, atol=1e-12 * max(1, np.abs(Mm).max()))
        assert np.linalg.eigvalsh(0.5 * (Mm + Mm.T)).min() >= -1e-10 * max(1, np.abs(Mm).max())


def test_lambda_max_matches_eigvalsh(rng):
    S = rng.standard_normal((6, 6))
    S = S @ S.T
    lam = lambda_max(dense_spd(S))
    assert math.isclose(lam, np.linalg.eigvalsh(S).max(), rel_tol=1e-6)


def test_accel_params_validation():
    with pytest.raises(RegionError) as exc:
        AccelParams(0, 1.7)
    assert exc.value.violations
    with pytest.raises(RegionError):
        AccelParams(0, 1, beta=0)
    with pytest.raises(RegionError):
        AccelParams(0, 1, sigma_hat=1.0)
    p = AccelParams.with_default_tolerance(0.9, 1.0)
    assert round(p.sigma_tilde, 3) == 0.099


def test_certificate_scalars_rate_constants():
    # sigma = 0.5, tau = 0, theta = 1, sigma_tilde = 0: vartheta = 1, phi = 0.5
    c = certificate_scalars(AccelParams(0, 1), lambda_M=1.0, d0=2.0, sigma=0.5)
    assert math.isclose(c.C1, 19) and math.isclose(c.C2, 5) and math.isclose(c.C3, 20)
    assert math.isclose(c.eta0, 4 * 1.0 * 2.0)
    assert math.isclose(c.eta(4.0, 0.0, AccelParams(0, 1)), 0.5 * 4.0)
    with pytest.raises(RegionError):
        certificate_scalars(AccelParams(0, 1), 1.0, 1.0, sigma=1.0)


def test_constant_ratio_identity():
    rng = np.random.default_rng(1)
    for tau, theta, st in random_region_points(rng, 20):
        c = certificate_scalars(AccelParams(tau, theta, st), 1.0, 1.0)
        assert math.isclose(c.C3 / c.C2, (3 - 2 * c.sigma) / (1 - c.sigma), rel_tol=1e-12)
