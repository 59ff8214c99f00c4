"""Run-time verification of the contraction and rate certificates.

Everything here observes a run; nothing feeds back into the iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .admm import ErgodicState, IterateState, PointwiseResiduals, Problem, pointwise_residuals, solve
from .linop import seminorm_sq
from .region import AccelParams, CertificateScalars, certificate_scalars, in_region, lambda_max

__all__ = [
    "SplittingVectors",
    "D0Estimate",
    "ReferenceSolution",
    "RateBounds",
    "CertificateMonitor",
    "splitting_vectors",
    "structural_errors",
    "estimate_d0",
    "reference_solution",
    "eta_k",
    "check_hpe",
    "check_fejer",
    "rate_constants",
    "check_rates",
    "quadratic_eps_gap",
    "LAMBDA_SAFETY",
    "CERT_RTOL",
    "IDENTITY_RTOL",
]

LAMBDA_SAFETY = 1.01
CERT_RTOL = 1e-8
IDENTITY_RTOL = 1e-10
ERGODIC_FLOOR = -1e-10


@dataclass
class SplittingVectors:
    p: np.ndarray
    q: np.ndarray


def splitting_vectors(prev: IterateState, state: IterateState, problem: Problem, beta) -> SplittingVectors:
    """``p_k = B(y_k - y_{k-1})``, ``q_k = -beta (A x_tilde_k + B y_k - b)``."""
    B = problem.B
    p = B._apply(state.y - prev.y)
    q = -beta * (problem.A._apply(state.x_tilde) + B._apply(state.y) - problem.b)
    return SplittingVectors(p, q)


def _rel(a, b, scale=0.0):
    diff = float(np.linalg.norm(a - b))
    if diff == 0.0:
        return 0.0
    return diff / max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), scale, 1e-300)


def structural_errors(prev: IterateState, state: IterateState, problem: Problem,
                      params: AccelParams, M=None, mdz=None) -> dict:
    """Relative errors of the per-iteration algebraic identities.

    Errors are measured against the size of the iterates entering each
    identity, so cancellation in small differences is not counted as failure.
    """
    beta, tau, theta = params.beta, params.tau, params.theta
    A, B, b = problem.A, problem.B, problem.b
    pq = splitting_vectors(prev, state, problem, beta)
    gscale = float(np.linalg.norm(prev.gamma) + np.linalg.norm(state.gamma)
                   + np.linalg.norm(state.gamma_tilde)) + beta * float(
        np.linalg.norm(A._apply(state.x_tilde)) + np.linalg.norm(B._apply(state.y)) + np.linalg.norm(b))
    out = {
        "pq_tilde_prev": _rel(state.gamma_tilde - prev.gamma, beta * pq.p + pq.q, gscale),
        "pq_tilde_new": _rel(state.gamma_tilde - state.gamma,
                                (1 - tau) * beta * pq.p + (1 - tau - theta) * pq.q, gscale),
        "pq_new_prev": _rel(state.gamma - prev.gamma, tau * beta * pq.p + (tau + theta) * pq.q, gscale),
    }
    res = pointwise_residuals(prev, state, problem, params)
    w_direct = A._apply(state.x_tilde) + B._apply(state.y) - b
    out["w_direct"] = _rel(res.w, w_direct, gscale / (beta * (params.tau + params.theta)))
    if M is None:
        M = problem.metric(params)
    if mdz is None:
        mdz = M._apply(prev.z - state.z)
    zscale = float(np.linalg.norm(M._apply(prev.z)) + np.linalg.norm(M._apply(state.z)))
    out["m_identity"] = _rel(res.stacked(), mdz, zscale)
    G = problem.prox_G(beta)
    out["x_update"] = _rel(state.x, prev.x - G._inverse(state.u), float(np.linalg.norm(prev.x)))
    return out


@dataclass
class ReferenceSolution:
    """Approximate primal-dual solution from an exact-mode solve."""

    z_ref: np.ndarray
    converged: bool
    outer: int
    stop_metric: float


@dataclass
class D0Estimate:
    d0: float
    z_ref: np.ndarray
    converged: bool
    outer: int


def reference_solution(problem: Problem, params: AccelParams | None = None, z0=None, tol=1e-10,
                       budget=100_000, beta=None) -> ReferenceSolution:
    """Exact-mode solve (``sigma_tilde = sigma_hat = 0``) used as a stand-in for ``z*``.

    Uses ``problem.reference_x_oracle`` when present. The solution set does
    not depend on ``beta``, so ``beta`` may be chosen for speed. Not reaching
    ``tol`` within ``budget`` is reported through ``converged``.
    """
    tau, theta = (0.0, 1.0) if params is None else (params.tau, params.theta)
    if not in_region(tau, theta, 0.0):
        tau, theta = 0.0, 1.0
    if beta is None:
        beta = 1.0 if params is None else params.beta
    ref_params = AccelParams(tau, theta, 0.0, 0.0, beta)
    ref_problem = problem
    if problem.reference_x_oracle is not None:
        ref_problem = replace(problem, x_oracle=problem.reference_x_oracle)
    n, p = problem.n, problem.p
    if z0 is None:
        z0 = np.zeros(n + p + problem.m)
    rep = solve(ref_problem, ref_params, tol=tol, max_outer=budget,
                x0=z0[:n], y0=z0[n:n + p], gamma0=z0[n + p:])
    last = rep.rows[-1]["stop_metric"] if rep.rows else math.nan
    return ReferenceSolution(rep.state.z, rep.converged, rep.outer, last)


def estimate_d0(problem: Problem, params: AccelParams, z0=None, tol=1e-10, budget=100_000,
                reference: ReferenceSolution | None = None, reference_beta=None) -> D0Estimate:
    """Estimate of ``d0 = inf ||z* - z0||_M^2`` as ``||z_ref - z0||_M^2``.

    Any solution gives an upper bound on the infimum; ``z_ref`` is only an
    approximate solution, so the estimate carries its accuracy.
    """
    if z0 is None:
        z0 = np.zeros(problem.n + problem.p + problem.m)
    if reference is None:
        reference = reference_solution(problem, params, z0, tol, budget, reference_beta)
    M = problem.metric(params)
    return D0Estimate(seminorm_sq(M, reference.z_ref - z0), reference.z_ref,
                      reference.converged, reference.outer)


def eta_k(certs: CertificateScalars, q, dy, H, params: AccelParams) -> float:
    dyH = seminorm_sq(H, dy) if dy is not None else 0.0
    return certs.eta(float(np.dot(q, q)), dyH, params)


def check_hpe(z_prev, z, z_tilde, eta_prev, eta, sigma, M):
    """Return ``(slack, lhs, rhs)`` of ``||zt - z||_M^2 + eta <= sigma ||zt - z_prev||_M^2 + eta_prev``."""
    lhs = seminorm_sq(M, z_tilde - z) + eta
    rhs = sigma * seminorm_sq(M, z_tilde - z_prev) + eta_prev
    return rhs - lhs, lhs, rhs


def check_fejer(z_ref, zs, etas, M):
    """Per-step decrease of ``||z_ref - z_k||_M^2 + eta_k`` (``zs``/``etas`` start at k = 0).

    Returns the list of slacks ``V_{k-1} - V_k`` and the values ``V_k``.
    """
    values = [seminorm_sq(M, z_ref - z) + e for z, e in zip(zs, etas)]
    return [values[i - 1] - values[i] for i in range(1, len(values))], values


@dataclass(frozen=True)
class RateBounds:
    C1: float
    C2: float
    C3: float
    lambda_M: float
    d0: float

    def pointwise(self, k):
        return math.sqrt(2.0 * self.lambda_M * self.d0 * self.C1 / k)

    def ergodic_residual(self, k):
        return 2.0 * math.sqrt(self.lambda_M * self.d0 * self.C2) / k

    def ergodic_eps(self, k):
        return 3.0 * self.d0 * self.C3 / (2.0 * k)


def rate_constants(certs: CertificateScalars) -> RateBounds:
    if not certs.sigma < 1.0:
        raise ValueError(f"invalid certificate: sigma={certs.sigma} >= 1")
    return RateBounds(certs.C1, certs.C2, certs.C3, certs.lambda_M, certs.d0)


def _within(value, bound):
    return value <= bound + CERT_RTOL * (1.0 + abs(bound))


def check_rates(trace, bounds: RateBounds):
    """Per-k pass flags for the pointwise (running minimum) and ergodic bounds.

    ``trace`` is a sequence of dicts with keys ``max_res`` (pointwise),
    ``erg_res``, ``eps`` and ``zeta`` (ergodic), ordered by k = 1, 2, ...
    """
    best = math.inf
    out = []
    for k, rec in enumerate(trace, start=1):
        best = min(best, rec["max_res"])
        out.append({
            "k": k,
            "pointwise": _within(best, bounds.pointwise(k)),
            "ergodic_residual": _within(rec["erg_res"], bounds.ergodic_residual(k)),
            "ergodic_eps": _within(max(rec["eps"], rec["zeta"]), bounds.ergodic_eps(k)),
        })
    return out


def quadratic_eps_gap(P, r, x_bar, v, eps) -> float:
    """``eps - 0.5 <P^{-1} d, d>`` with ``d = v - grad f(x_bar)``; nonnegative iff
    ``v`` is an eps-subgradient of ``f(x) = 0.5 <Px, x> - <r, x>`` at ``x_bar``."""
    d = v - (P @ x_bar - r)
    return eps - 0.5 * float(d @ np.linalg.solve(P, d))


@dataclass
class CertificateMonitor:
    """Collects the full certificate trace of one run.

    If no ``reference`` is given, ``start`` computes one with :func:`estimate_d0`.
    After the run, :meth:`violations` lists every failed check.
    """

    reference: ReferenceSolution | None = None
    reference_tol: float = 1e-10
    reference_budget: int = 100_000
    reference_beta: float | None = None
    check_structure: bool = True
    records: list = field(default_factory=list)

    def start(self, problem: Problem, params: AccelParams, state: IterateState):
        self.problem, self.params = problem, params
        self.M = problem.metric(params)
        self.H = problem.prox_H()
        if self.reference is None:
            self.reference = reference_solution(problem, params, state.z, self.reference_tol,
                                                self.reference_budget, self.reference_beta)
        self.d0 = estimate_d0(problem, params, state.z, reference=self.reference)
        lam = lambda_max(self.M) * LAMBDA_SAFETY
        self.certs = certificate_scalars(params, lam, self.d0.d0)
        self.bounds = rate_constants(self.certs)
        self.ergodic = ErgodicState(problem)
        self.eta_prev = self.certs.eta0
        self.fejer_prev = seminorm_sq(self.M, self.reference.z_ref - state.z) + self.eta_prev
        self.best = math.inf
        self.records = []

    def observe(self, prev: IterateState, state: IterateState, res: PointwiseResiduals, mdz):
        params, M = self.params, self.M
        pq = splitting_vectors(prev, state, self.problem, params.beta)
        eta = eta_k(self.certs, pq.q, state.y - prev.y, self.H, params)
        slack, lhs, rhs = check_hpe(prev.z, state.z, state.z_tilde, self.eta_prev, eta, self.certs.sigma, M)
        fejer = seminorm_sq(M, self.reference.z_ref - state.z) + eta
        fejer_slack = self.fejer_prev - fejer
        formula = pointwise_residuals(prev, state, self.problem, params)
        self.ergodic.update(state, formula)
        erg = self.ergodic.report()
        k = state.k
        max_res = formula.max_norm
        self.best = min(self.best, max_res)
        erg_res = max(np.linalg.norm(erg["u"]), np.linalg.norm(erg["v"]), np.linalg.norm(erg["w"]))
        A, B, b = self.problem.A, self.problem.B, self.problem.b
        means = erg["means"]
        rec = {
            "k": k, "eta": eta, "hpe_slack": slack, "hpe_lhs": lhs, "hpe_rhs": rhs,
            "fejer": fejer, "fejer_slack": fejer_slack, "fejer_scale": max(fejer, self.fejer_prev),
            "max_res": max_res, "best_res": self.best, "erg_res": float(erg_res),
            "eps": erg["eps"], "zeta": erg["zeta"],
            "erg_w_direct": _rel(erg["w"], A._apply(means["x_tilde"]) + B._apply(means["y"]) - b,
                                 float(np.linalg.norm(b)) + 1.0),
        }
        if self.check_structure:
            rec.update(structural_errors(prev, state, self.problem, params, M, mdz))
        self.records.append(rec)
        self.eta_prev = eta
        self.fejer_prev = fejer
        return {"hpe_lhs": lhs, "hpe_rhs": rhs, "fejer": fejer, "eps_erg": erg["eps"], "zeta_erg": erg["zeta"]}

    @property
    def warnings(self):
        if self.reference is not None and not self.reference.converged:
            return [f"reference solve stopped after {self.reference.outer} iterations at "
                    f"{self.reference.stop_metric:.3e}; d0 is an approximation"]
        return []

    def violations(self):
        """Human-readable list of failed checks (empty when everything holds)."""
        out = []
        rates = check_rates(self.records, self.bounds)
        for rec, rate in zip(self.records, rates):
            k = rec["k"]
            if rec["hpe_slack"] < -CERT_RTOL * (1.0 + max(rec["hpe_lhs"], rec["hpe_rhs"])):
                out.append(f"k={k}: HPE slack {rec['hpe_slack']:.3e}")
            if rec["fejer_slack"] < -CERT_RTOL * (1.0 + rec["fejer_scale"]):
                out.append(f"k={k}: Fejer increase {-rec['fejer_slack']:.3e}")
            if rec["eps"] < ERGODIC_FLOOR or rec["zeta"] < ERGODIC_FLOOR:
                out.append(f"k={k}: negative ergodic slack eps={rec['eps']:.3e} zeta={rec['zeta']:.3e}")
            for name in ("pointwise", "ergodic_residual", "ergodic_eps"):
                if not rate[name]:
                    out.append(f"k={k}: {name} bound violated")
            if self.check_structure:
                for name in ("pq_tilde_prev", "pq_tilde_new", "pq_new_prev",
                             "w_direct", "m_identity", "x_update"):
                    if rec[name] > IDENTITY_RTOL:
                        out.append(f"k={k}: identity {name} off by {rec[name]:.3e}")
            if rec["erg_w_direct"] > IDENTITY_RTOL:
                out.append(f"k={k}: ergodic w identity off by {rec['erg_w_direct']:.3e}")
        return out
