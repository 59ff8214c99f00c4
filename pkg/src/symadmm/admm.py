"""Inexact symmetric proximal ADMM for ``min f(x) + g(y)  s.t.  A x + B y = b``.

One outer iteration from ``(x, y, gamma)``:

1. an x-oracle returns ``(x_tilde, u)`` with ``u`` a subgradient residual at
   ``gamma_tilde = gamma - beta (A x_tilde + B y - b)`` that passes the
   relative-error test (``accept_inexact``);
2. ``gamma_half = gamma - tau beta (A x_tilde + B y - b)``;
3. a y-oracle solves the y-step exactly against ``gamma_half``;
4. ``x <- x - G^{-1} u`` and ``gamma <- gamma_half - theta beta (A x_tilde + B y_new - b)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .linop import DimensionError, LinearOperator, ScaledIdentity, SpdOperator, Zero
from .region import AccelParams, build_M

__all__ = [
    "ConfigurationError",
    "AcceptanceError",
    "Problem",
    "IterateState",
    "PointwiseResiduals",
    "ErgodicState",
    "RunReport",
    "initial_state",
    "gamma_tilde",
    "acceptance_terms",
    "accept_inexact",
    "step",
    "pointwise_residuals",
    "m_delta",
    "stopped",
    "solve",
    "default_inner_cap",
    "CSV_COLUMNS",
]

ACCEPT_SLACK = 1e-12
CSV_COLUMNS = ("k", "norm_u", "norm_v", "norm_w", "stop_metric", "inner",
               "hpe_lhs", "hpe_rhs", "fejer", "eps_erg", "zeta_erg")


class ConfigurationError(ValueError):
    pass


class AcceptanceError(RuntimeError):
    """The x-oracle returned a pair that fails the relative-error test."""


@dataclass
class Problem:
    """Operators, data and sub-step oracles of one problem instance.

    ``G`` defaults to ``I / beta`` and ``H`` to ``0``. ``reference_x_oracle``
    is an exact x-oracle used for high-accuracy reference solves.
    """

    A: LinearOperator
    B: LinearOperator
    b: np.ndarray
    x_oracle: Callable
    y_oracle: Callable
    G: Optional[SpdOperator] = None
    H: Optional[SpdOperator] = None
    f: Any = None
    g: Any = None
    reference_x_oracle: Optional[Callable] = None
    name: str = "problem"

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.A.out_dim != self.B.out_dim:
            raise DimensionError("A vs B rows", self.A.out_dim, self.B.out_dim)
        if self.b.shape != (self.A.out_dim,):
            raise DimensionError("b", self.A.out_dim, self.b.shape)
        if self.G is not None and self.G.in_dim != self.n:
            raise DimensionError("G", self.n, self.G.in_dim)
        if self.H is not None and self.H.in_dim != self.p:
            raise DimensionError("H", self.p, self.H.in_dim)
        self._G_cache = {}

    @property
    def n(self):
        return self.A.in_dim

    @property
    def p(self):
        return self.B.in_dim

    @property
    def m(self):
        return self.A.out_dim

    def prox_G(self, beta) -> SpdOperator:
        if self.G is not None:
            return self.G
        if beta not in self._G_cache:
            self._G_cache = {beta: ScaledIdentity(self.n, 1.0 / beta)}
        return self._G_cache[beta]

    def prox_H(self) -> SpdOperator:
        return self.H if self.H is not None else Zero(self.p)

    def metric(self, params: AccelParams) -> SpdOperator:
        return build_M(self.prox_G(params.beta), self.prox_H(), self.B, params)

    def objective(self, x, y):
        if self.f is None or self.g is None:
            return math.nan
        return self.f.value(x) + self.g.value(y)


@dataclass(frozen=True)
class IterateState:
    x: np.ndarray
    y: np.ndarray
    gamma: np.ndarray
    x_tilde: np.ndarray
    gamma_tilde: np.ndarray
    gamma_half: np.ndarray
    u: np.ndarray
    k: int = 0
    inner_count: int = 0
    inner: int = 0

    @property
    def z(self):
        return np.concatenate((self.x, self.y, self.gamma))

    @property
    def z_tilde(self):
        return np.concatenate((self.x_tilde, self.y, self.gamma_tilde))


def initial_state(problem: Problem, x0=None, y0=None, gamma0=None) -> IterateState:
    x = np.zeros(problem.n) if x0 is None else np.array(x0, dtype=np.float64)
    y = np.zeros(problem.p) if y0 is None else np.array(y0, dtype=np.float64)
    g = np.zeros(problem.m) if gamma0 is None else np.array(gamma0, dtype=np.float64)
    if x.shape != (problem.n,) or y.shape != (problem.p,) or g.shape != (problem.m,):
        raise DimensionError("initial point", (problem.n, problem.p, problem.m),
                             (x.shape, y.shape, g.shape))
    return IterateState(x, y, g, x.copy(), g.copy(), g.copy(), np.zeros(problem.n))


def gamma_tilde(gamma_prev, x_tilde, y_prev, problem: Problem, beta):
    return gamma_prev - beta * (problem.A.apply(x_tilde) + problem.B.apply(y_prev) - problem.b)


def acceptance_terms(x_tilde, x_prev, u, gamma_t, gamma_prev, G: SpdOperator, beta,
                     sigma_tilde, sigma_hat, Gx=None, Gx_prev=None):
    """Both sides of the relative-error test.

    ``lhs = ||x_tilde - x_prev + G^{-1} u||_G^2``,
    ``rhs = (sigma_tilde/beta) ||gamma_t - gamma_prev||^2 + sigma_hat ||x_tilde - x_prev||_G^2``.
    ``Gx``/``Gx_prev`` may be passed to skip two applications of ``G``.
    """
    if not getattr(G, "has_inverse", False):
        raise ConfigurationError("relative-error test needs G with inverse_apply (G positive definite)")
    Gx = G._apply(x_tilde) if Gx is None else Gx
    Gx_prev = G._apply(x_prev) if Gx_prev is None else Gx_prev
    dx = x_tilde - x_prev
    Gdx = Gx - Gx_prev
    # e = dx + G^{-1} u and G e = G dx + u
    lhs = max(float(np.dot(Gdx + u, dx + G._inverse(u))), 0.0)
    dg = gamma_t - gamma_prev
    rhs = float(sigma_tilde / beta * np.dot(dg, dg) + sigma_hat * np.dot(Gdx, dx))
    return lhs, rhs


def accept_inexact(x_tilde, x_prev, u, gamma_t, gamma_prev, G, beta, sigma_tilde, sigma_hat) -> bool:
    lhs, rhs = acceptance_terms(x_tilde, x_prev, u, gamma_t, gamma_prev, G, beta, sigma_tilde, sigma_hat)
    return lhs <= rhs + ACCEPT_SLACK


def default_inner_cap(problem: Problem) -> int:
    return max(10, int(math.ceil(10.0 * math.sqrt(problem.n))))


def step(state: IterateState, problem: Problem, params: AccelParams, max_inner=None) -> IterateState:
    beta, tau, theta = params.beta, params.tau, params.theta
    A, B, b = problem.A, problem.B, problem.b
    G, H = problem.prox_G(beta), problem.prox_H()
    cap = default_inner_cap(problem) if max_inner is None else int(max_inner)

    xs = problem.x_oracle(state.x, state.y, state.gamma, problem, params, G, cap)
    x_t, u = xs.x_tilde, xs.u
    Ax = A._apply(x_t)
    r_prev = Ax + B._apply(state.y) - b
    g_t = state.gamma - beta * r_prev
    if not accept_inexact(x_t, state.x, u, g_t, state.gamma, G, beta, params.sigma_tilde, params.sigma_hat):
        lhs, rhs = acceptance_terms(x_t, state.x, u, g_t, state.gamma, G, beta,
                                    params.sigma_tilde, params.sigma_hat)
        raise AcceptanceError(f"x-oracle pair rejected at k={state.k + 1}: lhs={lhs:.3e} > rhs={rhs:.3e}")

    g_half = state.gamma - tau * beta * r_prev
    y = np.asarray(problem.y_oracle(state.y, x_t, g_half, problem, params, H), dtype=np.float64)
    r_new = Ax + B._apply(y) - b
    x = state.x - G._inverse(u)
    g = g_half - theta * beta * r_new
    return IterateState(x, y, g, x_t, g_t, g_half, u, state.k + 1,
                        state.inner_count + xs.inner, xs.inner)


@dataclass
class PointwiseResiduals:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    @property
    def max_norm(self):
        return max(np.linalg.norm(self.u), np.linalg.norm(self.v), np.linalg.norm(self.w))

    def stacked(self):
        return np.concatenate((self.u, self.v, self.w))


def pointwise_residuals(prev: IterateState, state: IterateState, problem: Problem,
                        params: AccelParams) -> PointwiseResiduals:
    """Residuals ``(u_k, v_k, w_k)`` of the Lagrangian system at ``(x_tilde_k, y_k, gamma_tilde_k)``."""
    tau, theta, beta = params.tau, params.theta, params.beta
    s = tau + theta
    B = problem.B
    G, H = problem.prox_G(beta), problem.prox_H()
    dy = prev.y - state.y
    dg = prev.gamma - state.gamma
    Bdy = B._apply(dy)
    u = G._apply(prev.x - state.x)
    v = H._apply(dy) + B._adjoint((tau - tau * theta + theta) * beta / s * Bdy - tau / s * dg)
    w = -tau / s * Bdy + dg / (s * beta)
    return PointwiseResiduals(u, v, w)


def m_delta(prev: IterateState, state: IterateState, M: SpdOperator):
    """``M (z_{k-1} - z_k)``."""
    return M._apply(prev.z - state.z)


def stopped(prev: IterateState, state: IterateState, M: SpdOperator, tol=1e-2) -> bool:
    return float(np.max(np.abs(m_delta(prev, state, M)))) < tol


class ErgodicState:
    """Running sums giving the ergodic means and the eps/zeta slacks in O(1) memory."""

    def __init__(self, problem: Problem):
        self.problem = problem
        n, p, m = problem.n, problem.p, problem.m
        self.k = 0
        self.sums = {name: np.zeros(d) for name, d in
                     (("x", n), ("y", p), ("gamma", m), ("x_tilde", n), ("gamma_tilde", m),
                      ("u", n), ("v", p), ("w", m), ("s", n), ("t", p))}
        # compensated (Neumaier) scalar sums of <s_i, x_tilde_i> and <t_i, y_i>
        self._sx = [0.0, 0.0]
        self._ty = [0.0, 0.0]

    @staticmethod
    def _acc(pair, value):
        s, c = pair
        t = s + value
        if abs(s) >= abs(value):
            c += (s - t) + value
        else:
            c += (value - t) + s
        pair[0], pair[1] = t, c

    def update(self, state: IterateState, res: PointwiseResiduals):
        A, B = self.problem.A, self.problem.B
        s_i = res.u + A._adjoint(state.gamma_tilde)
        t_i = res.v + B._adjoint(state.gamma_tilde)
        for name, vec in (("x", state.x), ("y", state.y), ("gamma", state.gamma),
                          ("x_tilde", state.x_tilde), ("gamma_tilde", state.gamma_tilde),
                          ("u", res.u), ("v", res.v), ("w", res.w), ("s", s_i), ("t", t_i)):
            self.sums[name] += vec
        self._acc(self._sx, float(np.dot(s_i, state.x_tilde)))
        self._acc(self._ty, float(np.dot(t_i, state.y)))
        self.k += 1
        return self

    def report(self):
        k = self.k
        if k == 0:
            raise ValueError("ergodic report needs at least one iteration")
        means = {name: vec / k for name, vec in self.sums.items()}
        eps = (self._sx[0] + self._sx[1] - float(np.dot(self.sums["s"], means["x_tilde"]))) / k
        zeta = (self._ty[0] + self._ty[1] - float(np.dot(self.sums["t"], means["y"]))) / k
        return {"u": means["u"], "v": means["v"], "w": means["w"], "eps": eps, "zeta": zeta,
                "means": means}


@dataclass
class RunReport:
    rows: list = field(default_factory=list)
    converged: bool = False
    outer: int = 0
    inner: int = 0
    time: float = 0.0
    state: Optional[IterateState] = None
    params: Optional[AccelParams] = None
    extra: dict = field(default_factory=dict)

    def summary(self):
        out = {"Out": self.outer, "Inner": self.inner, "Time": self.time, "converged": self.converged}
        out.update(self.extra)
        return out

    def to_csv(self, path_or_file, include_footer=True):
        lines = [",".join(CSV_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(_fmt(row.get(c, math.nan)) for c in CSV_COLUMNS))
        if include_footer:
            lines.append("# " + " ".join(f"{k}={_fmt(v)}" for k, v in self.summary().items()))
        text = "\n".join(lines) + "\n"
        if hasattr(path_or_file, "write"):
            path_or_file.write(text)
        else:
            with open(path_or_file, "w") as fh:
                fh.write(text)
        return text


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def solve(problem: Problem, params: AccelParams, tol=1e-2, max_outer=1000, max_inner=None,
          monitors: Sequence = (), x0=None, y0=None, gamma0=None, callback=None) -> RunReport:
    """Run outer iterations until ``||M (z_{k-1} - z_k)||_inf < tol`` or ``max_outer``.

    Monitors expose ``start(problem, params, state)`` and
    ``observe(prev, state, residuals, mdz) -> dict`` whose keys fill the
    certificate columns of the report. Non-convergence is reported, not raised.
    """
    state = initial_state(problem, x0, y0, gamma0)
    M = problem.metric(params)
    report = RunReport(params=params, state=state)
    for mon in monitors:
        mon.start(problem, params, state)
    elapsed = 0.0
    n = problem.n
    for _ in range(max_outer):
        t0 = time.perf_counter()
        new = step(state, problem, params, max_inner)
        mdz = m_delta(state, new, M)
        metric = float(np.max(np.abs(mdz))) if mdz.size else 0.0
        elapsed += time.perf_counter() - t0
        res = PointwiseResiduals(mdz[:n], mdz[n:n + problem.p], mdz[n + problem.p:])
        row = {"k": new.k, "norm_u": float(np.linalg.norm(res.u)), "norm_v": float(np.linalg.norm(res.v)),
               "norm_w": float(np.linalg.norm(res.w)), "stop_metric": metric, "inner": new.inner}
        for mon in monitors:
            row.update(mon.observe(state, new, res, mdz) or {})
        report.rows.append(row)
        state = new
        if callback is not None:
            callback(state, row)
        if metric < tol:
            report.converged = True
            break
    report.state = state
    report.outer = state.k
    report.inner = state.inner_count
    report.time = elapsed
    for mon in monitors:
        if hasattr(mon, "finish"):
            mon.finish(report)
    return report
