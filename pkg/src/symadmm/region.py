"""Admissible acceleration parameters and the contraction certificate scalars.

The admissible set for ``(tau, theta)`` given the x-step tolerance
``sigma_tilde`` is::

    -1 < tau < 1 - sigma_tilde,    tau + theta > 0,
    (1 - tau^2)(2 - tau - theta - sigma_tilde)
        - (1 - theta)^2 (1 - tau - sigma_tilde) > 0
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linop import DimensionError, LinearOperator, SpdOperator

__all__ = [
    "RegionError",
    "AccelParams",
    "CertificateScalars",
    "region_violations",
    "in_region",
    "sigma_tilde_default",
    "phi_family",
    "select_sigma",
    "vartheta",
    "build_M",
    "build_Q",
    "lambda_max",
    "certificate_scalars",
]

MARGIN = 1e-12
SIGMA_GRID = 2048
SIGMA_BISECT = 40


class RegionError(ValueError):
    """Parameters fall outside the admissible region (or a derived quantity fails)."""

    def __init__(self, message, violations=()):
        self.violations = list(violations)
        super().__init__(message)


def region_violations(tau, theta, sigma_tilde):
    """Names of the admissibility conditions that fail; empty when admissible."""
    out = []
    if not 0.0 <= sigma_tilde < 1.0:
        out.append("0 <= sigma_tilde < 1")
    if not tau > -1.0 + MARGIN:
        out.append("tau > -1")
    if not tau < 1.0 - sigma_tilde - MARGIN:
        out.append("tau < 1 - sigma_tilde")
    if not tau + theta > MARGIN:
        out.append("tau + theta > 0")
    third = (1 - tau**2) * (2 - tau - theta - sigma_tilde) - (1 - theta) ** 2 * (1 - tau - sigma_tilde)
    if not third > MARGIN:
        out.append("(1-tau^2)(2-tau-theta-sigma_tilde) - (1-theta)^2(1-tau-sigma_tilde) > 0")
    return out


def in_region(tau, theta, sigma_tilde=0.0) -> bool:
    return not region_violations(tau, theta, sigma_tilde)


def theta_upper(tau):
    """Upper end of the theta range on which the default sigma_tilde is defined."""
    return (1.0 - tau + math.sqrt(5.0 + 2.0 * tau - 3.0 * tau * tau)) / 2.0


def sigma_tilde_default(tau, theta) -> float:
    """Largest-ish admissible x-step tolerance, shrunk by a 0.99 factor."""
    if not -1.0 < tau < 1.0:
        raise RegionError(f"sigma_tilde_default: tau={tau} outside (-1, 1)", ["tau in (-1, 1)"])
    hi = theta_upper(tau)
    if not -tau < theta < hi:
        raise RegionError(
            f"sigma_tilde_default: theta={theta} outside ({0.0 - tau:g}, {hi:.6g})",
            ["theta in (-tau, (1 - tau + sqrt(5 + 2 tau - 3 tau^2)) / 2)"],
        )
    denom = tau * tau - 2.0 * theta + theta * theta
    if denom < 0:
        kappa = 1 + tau + theta - tau * theta - tau * tau - theta * theta
        cap = kappa * (tau - 1.0) / denom
        return 0.99 * min(cap, 1.0 - tau, 1.0)
    return 0.99 * min(1.0 - tau, 1.0)


@dataclass(frozen=True)
class AccelParams:
    tau: float
    theta: float
    sigma_tilde: float = 0.0
    sigma_hat: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise RegionError(f"beta must be positive, got {self.beta}", ["beta > 0"])
        if not 0.0 <= self.sigma_hat < 1.0:
            raise RegionError(f"sigma_hat={self.sigma_hat} outside [0, 1)", ["0 <= sigma_hat < 1"])
        bad = region_violations(self.tau, self.theta, self.sigma_tilde)
        if bad:
            raise RegionError(
                f"(tau, theta, sigma_tilde) = ({self.tau}, {self.theta}, {self.sigma_tilde}) "
                f"violates: {'; '.join(bad)}",
                bad,
            )

    @classmethod
    def with_default_tolerance(cls, tau, theta, sigma_hat=0.0, beta=1.0):
        return cls(tau, theta, sigma_tilde_default(tau, theta), sigma_hat, beta)


def phi_family(sigma, tau, theta, sigma_tilde):
    """The four polynomials whose signs certify the contraction at ``sigma``."""
    phi = (1 - tau) * (sigma - 1) + (1 - tau - sigma_tilde) * (tau + theta)
    phi_hat = (1 - tau) * ((1 + theta) * sigma - 1 + tau) - sigma_tilde * (tau + theta)
    phi_tilde = sigma - (1 - tau - theta) ** 2 - sigma_tilde * (tau + theta)
    phi_bar = ((1 + tau) * phi_hat - 2 * tau * phi) * (1 + tau) * phi_tilde - (1 - theta) ** 2 * phi**2
    return phi, phi_hat, phi_tilde, phi_bar


def _feasible(sigma, tau, theta, sigma_tilde):
    phi, phi_hat, phi_tilde, phi_bar = phi_family(sigma, tau, theta, sigma_tilde)
    return phi >= 0 and phi_hat >= 0 and phi_tilde > 0 and phi_bar >= 0


def select_sigma(tau, theta, sigma_tilde, sigma_hat=0.0) -> float:
    """Smallest sigma in [sigma_hat, 1) passing all four sign conditions.

    Grid search with step ``(1 - sigma_hat) / 2048`` followed by bisection
    between the last infeasible and first feasible grid points.
    """
    if not in_region(tau, theta, sigma_tilde):
        raise RegionError("select_sigma: parameters outside the region",
                          region_violations(tau, theta, sigma_tilde))
    if not 0.0 <= sigma_hat < 1.0:
        raise RegionError(f"select_sigma: sigma_hat={sigma_hat} outside [0, 1)")
    step = (1.0 - sigma_hat) / SIGMA_GRID
    prev = None
    for j in range(SIGMA_GRID):
        s = sigma_hat + j * step
        if _feasible(s, tau, theta, sigma_tilde):
            if prev is None:
                return s
            lo, hi = prev, s
            for _ in range(SIGMA_BISECT):
                mid = 0.5 * (lo + hi)
                if _feasible(mid, tau, theta, sigma_tilde):
                    hi = mid
                else:
                    lo = mid
            return hi
        prev = s
    raise RegionError(
        f"select_sigma: no feasible sigma on the grid for tau={tau}, theta={theta}, "
        f"sigma_tilde={sigma_tilde}, sigma_hat={sigma_hat}"
    )


def vartheta(tau, theta, sigma_tilde) -> float:
    rad = (3 - 3 * tau - 2 * sigma_tilde) * (4 - tau - theta - 2 * sigma_tilde)
    if rad < 0:
        raise RegionError(f"vartheta: negative radicand {rad}")
    val = math.sqrt(rad) - 2 * (1 - tau - sigma_tilde)
    if not val > 0:
        raise RegionError(f"vartheta: non-positive value {val}")
    return val


def build_Q(params: AccelParams) -> np.ndarray:
    """Scalar 2x2 kernel of the block matrix used in the first-step bound."""
    tau, theta, st, beta = params.tau, params.theta, params.sigma_tilde, params.beta
    off = 2 * (1 - tau - st)
    return np.array([[(3 - 3 * tau - 2 * st) * beta, off],
                     [off, (4 - tau - theta - 2 * st) / beta]])


def build_M(G: SpdOperator, H: SpdOperator, B: LinearOperator, params: AccelParams) -> SpdOperator:
    """Block metric on ``z = (x, y, gamma)``::

        [ G   0                             0              ]
        [ 0   H + (tau-tau*theta+theta)beta/(tau+theta) B'B   -tau/(tau+theta) B' ]
        [ 0   -tau/(tau+theta) B            1/((tau+theta)beta) I ]
    """
    if H.in_dim != B.in_dim:
        raise DimensionError("build_M: H vs B columns", B.in_dim, H.in_dim)
    tau, theta, beta = params.tau, params.theta, params.beta
    s = tau + theta
    if s == 0:
        raise ZeroDivisionError("build_M: tau + theta = 0")
    c_yy = (tau - tau * theta + theta) * beta / s
    c_off = tau / s
    c_gg = 1.0 / (s * beta)
    n, p, m = G.in_dim, H.in_dim, B.out_dim

    def apply(z):
        x, y, g = z[:n], z[n:n + p], z[n + p:]
        By = B._apply(y)
        out_y = H._apply(y) + B._adjoint(c_yy * By - c_off * g)
        out_g = -c_off * By + c_gg * g
        return np.concatenate((G._apply(x), out_y, out_g))

    M = SpdOperator(n + p + m, apply, name="M")
    M.blocks = (n, p, m)
    return M


def lambda_max(op: LinearOperator, iters=200, tol=1e-10, rng=0) -> float:
    """Largest eigenvalue of a symmetric PSD operator by power iteration."""
    rng = np.random.default_rng(rng)
    v = rng.standard_normal(op.in_dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = op._apply(v)
        lam_new = float(np.dot(v, w))
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
    return lam


@dataclass(frozen=True)
class CertificateScalars:
    sigma: float
    vartheta: float
    phi: float
    phi_hat: float
    phi_tilde: float
    phi_bar: float
    lambda_M: float
    d0: float
    eta0: float
    C1: float
    C2: float
    C3: float

    def eta(self, q_norm_sq, dy_H_sq, params: AccelParams) -> float:
        """eta_k from ||q_k||^2 and ||y_k - y_{k-1}||_H^2."""
        s = params.tau + params.theta
        return (self.phi_tilde / (s * params.beta) * q_norm_sq
                + self.phi / (s * (1 + params.tau)) * dy_H_sq)


def certificate_scalars(params: AccelParams, lambda_M: float, d0: float,
                        sigma: float | None = None) -> CertificateScalars:
    tau, theta, st = params.tau, params.theta, params.sigma_tilde
    if sigma is None:
        sigma = select_sigma(tau, theta, st, params.sigma_hat)
    if not sigma < 1.0:
        raise RegionError(f"certificate needs sigma < 1, got {sigma}")
    vt = vartheta(tau, theta, st)
    phi, phi_hat, phi_tilde, phi_bar = phi_family(sigma, tau, theta, st)
    ratio = (1 + tau + vt) * phi / ((tau + theta) * (1 + tau) * vt)
    eta0 = 4 * ratio * d0
    C1 = (1 + sigma + 8 * ratio) / (1 - sigma)
    C2 = 1 + 4 * ratio
    C3 = (3 - 2 * sigma) * C2 / (1 - sigma)
    return CertificateScalars(sigma, vt, phi, phi_hat, phi_tilde, phi_bar,
                              float(lambda_M), float(d0), eta0, C1, C2, C3)
