"""Sub-step solvers for the x-step (inexact) and the y-step (exact).

x-oracles are called as ``oracle(x_prev, y_prev, gamma_prev, problem, params, G, cap)``
and return an :class:`XStep`. y-oracles are called as
``oracle(y_prev, x_tilde, gamma_half, problem, params, H)`` and return ``y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from . import kernels
from .admm import ConfigurationError, acceptance_terms
from .linop import DenseOperator, Identity, LinearOperator, ScaledIdentity, SpdOperator, Zero, materialize

__all__ = [
    "QuadraticF",
    "XStep",
    "InnerCapExceeded",
    "CGXOracle",
    "ExactXOracle",
    "Shrink2DYOracle",
    "DenseProxYOracle",
    "shrink2d",
    "soft_threshold",
    "shrink_optimality_error",
]

# in the zero-tolerance regime the CG residual must reach this relative level
EXACT_RTOL = 1e-14


class InnerCapExceeded(RuntimeError):
    def __init__(self, cap, last_residual, lhs=math.nan, rhs=math.nan):
        self.cap = cap
        self.last_residual = last_residual
        self.lhs, self.rhs = lhs, rhs
        super().__init__(
            f"x-step not accepted within {cap} inner iterations "
            f"(last residual {last_residual:.3e}, lhs {lhs:.3e}, rhs {rhs:.3e})"
        )


@dataclass
class QuadraticF:
    """``f(x) = 0.5 <P x, x> - <r, x> + const``."""

    P: LinearOperator
    r: np.ndarray
    const: float = 0.0

    def value(self, x):
        return 0.5 * float(np.dot(self.P.apply(x), x)) - float(np.dot(self.r, x)) + self.const

    def grad(self, x):
        return self.P.apply(x) - self.r


@dataclass
class XStep:
    x_tilde: np.ndarray
    u: np.ndarray
    inner: int
    residual: float  # norm of the linear-system residual actually solved


def _step_system(f: QuadraticF, problem, y_prev, gamma_prev, beta):
    """Operator ``S = P + beta A'A`` (as a callable) and ``rhs`` of the x-step.

    For quadratic f the subgradient residual is exactly ``u = S x - rhs``.
    """
    A, B, b = problem.A, problem.B, problem.b
    rhs = f.r + A._adjoint(gamma_prev - beta * (B._apply(y_prev) - b))

    def S(v):
        Av = A._apply(v)
        return f.P._apply(v) + beta * A._adjoint(Av), Av

    return S, rhs


class CGXOracle:
    """Conjugate gradient on the x-step system with the relative-error test.

    With ``proximal=True`` CG runs on ``(S + G) x = rhs + G x_prev``, the exact
    proximal x-step. With ``proximal=False`` it runs on ``S x = rhs`` (the
    proximal term is then absorbed by a loose ``sigma_hat``). Either way the
    acceptance test is checked after every CG iteration and ``u = S x - rhs``.
    """

    def __init__(self, f: QuadraticF, proximal=True, warm_start=False):
        self.f = f
        self.proximal = proximal
        self.warm_start = warm_start

    def __call__(self, x_prev, y_prev, gamma_prev, problem, params, G, cap):
        beta = params.beta
        A, B, b = problem.A, problem.B, problem.b
        S, rhs = _step_system(self.f, problem, y_prev, gamma_prev, beta)
        By_b = B._apply(y_prev) - b
        Gx_prev = G._apply(x_prev)
        sys_rhs = rhs + Gx_prev if self.proximal else rhs
        rhs_norm = float(np.linalg.norm(sys_rhs))
        zero_tol = params.sigma_tilde == 0.0 and params.sigma_hat == 0.0

        if self.warm_start:
            x = x_prev.copy()
            Sx, Ax = S(x)
        else:
            x = np.zeros_like(x_prev)
            Sx, Ax = np.zeros_like(x_prev), np.zeros(problem.m)
        Gx = G._apply(x) if self.warm_start else np.zeros_like(x)
        r = sys_rhs - (Sx + Gx if self.proximal else Sx)
        p = r.copy()
        rr = float(np.dot(r, r))

        def terms(x, Sx, Ax, Gx):
            u = Sx - rhs
            gt = gamma_prev - beta * (Ax + By_b)
            lhs, rhs_ = acceptance_terms(x, x_prev, u, gt, gamma_prev, G, beta,
                                         params.sigma_tilde, params.sigma_hat,
                                         Gx=Gx, Gx_prev=Gx_prev)
            return u, lhs, rhs_

        if rr == 0.0:
            u, lhs, rhs_ = terms(x, Sx, Ax, Gx)
            if lhs <= rhs_ + 1e-12:
                return XStep(x, u, 0, 0.0)

        lhs = rhs_ = math.nan
        for j in range(1, cap + 1):
            Sp, Ap = S(p)
            Gp = G._apply(p)
            q = Sp + Gp if self.proximal else Sp
            pq = float(np.dot(p, q))
            if pq <= 0.0:
                break
            alpha = rr / pq
            x = x + alpha * p
            Sx = Sx + alpha * Sp
            Ax = Ax + alpha * Ap
            Gx = Gx + alpha * Gp
            r = r - alpha * q
            rr_new = float(np.dot(r, r))
            u, lhs, rhs_ = terms(x, Sx, Ax, Gx)
            res = math.sqrt(rr_new)
            if zero_tol:
                ok = lhs <= 1e-12 and (res <= EXACT_RTOL * (1.0 + rhs_norm) or j >= 2 * x.size)
            else:
                ok = lhs <= rhs_ + 1e-12
            if ok or rr_new == 0.0:
                if lhs <= rhs_ + 1e-12:
                    return XStep(x, u, j, res)
            if rr_new == 0.0:
                # system solved exactly, further iterations cannot help
                rr = rr_new
                break
            p = r + (rr_new / rr) * p
            rr = rr_new
        raise InnerCapExceeded(cap, math.sqrt(rr), lhs, rhs_)


class ExactXOracle:
    """Direct dense solve of the proximal x-step ``(S + G) x = rhs + G x_prev``.

    The factorization is cached per ``beta``; ``max_dim`` guards against
    accidental materialization of large operators.
    """

    def __init__(self, f: QuadraticF, max_dim=4096):
        self.f = f
        self.max_dim = max_dim
        self._cache = {}

    def _factor(self, problem, beta, G):
        key = (beta, id(G))
        if key not in self._cache:
            n = problem.n
            if hasattr(self.f.P, "matrix") and hasattr(problem.A, "matrix"):
                A = problem.A.matrix
                S = self.f.P.matrix + beta * A.T @ A
            else:
                S_op, _ = _step_system(self.f, problem, np.zeros(problem.p), np.zeros(problem.m), beta)
                S = materialize(LinearOperator(n, n, lambda v: S_op(v)[0], lambda v: S_op(v)[0], name="S"),
                                max_dim=self.max_dim)
            Gm = G.matrix if hasattr(G, "matrix") else materialize(G, max_dim=self.max_dim)
            S = 0.5 * (S + S.T)
            try:
                factor = sla.cho_factor(S + Gm)
            except np.linalg.LinAlgError as exc:  # G positive definite makes this unreachable
                raise ConfigurationError(f"x-step system not positive definite ({exc})")
            self._cache = {key: (factor, S, n)}
        return self._cache[key]

    def __call__(self, x_prev, y_prev, gamma_prev, problem, params, G, cap):
        beta = params.beta
        factor, S, _ = self._factor(problem, beta, G)
        _, rhs = _step_system(self.f, problem, y_prev, gamma_prev, beta)
        sys_rhs = rhs + G._apply(x_prev)
        x = sla.cho_solve(factor, sys_rhs)
        u = S @ x - rhs
        res = float(np.linalg.norm(u + G._apply(x) - G._apply(x_prev)))
        return XStep(x, u, 1, res)


def shrink2d(w1, w2, thresh):
    """Pairwise isotropic shrinkage; ``0 * (0/0) = 0``."""
    return kernels.shrink2d(np.asarray(w1, dtype=np.float64), np.asarray(w2, dtype=np.float64), float(thresh))


def soft_threshold(v, thresh):
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def _is_identity(op):
    if isinstance(op, Identity):
        return True
    if isinstance(op, ScaledIdentity):
        return op.c == 1.0
    mat = getattr(op, "matrix", None)
    return mat is not None and mat.shape[0] == mat.shape[1] and np.array_equal(mat, np.eye(mat.shape[0]))


def _is_zero(op):
    if op is None or isinstance(op, Zero):
        return True
    if isinstance(op, ScaledIdentity):
        return op.c == 0.0
    mat = getattr(op, "matrix", None)
    return mat is not None and not np.any(mat)


class Shrink2DYOracle:
    """Closed-form y-step for ``g(y) = weight * sum_ij ||(y1_ij, y2_ij)||``.

    Requires ``B = I`` and ``H = 0``; ``y`` stacks two ``(m, n)`` images.
    """

    def __init__(self, m, n, weight=1.0):
        self.m, self.n = int(m), int(n)
        self.weight = float(weight)

    def target(self, x_tilde, gamma_half, problem, beta):
        return problem.b - problem.A._apply(x_tilde) + gamma_half / beta

    def __call__(self, y_prev, x_tilde, gamma_half, problem, params, H):
        if not _is_identity(problem.B) or not _is_zero(H):
            raise ConfigurationError("Shrink2DYOracle needs B = I and H = 0")
        w = self.target(x_tilde, gamma_half, problem, params.beta)
        mn = self.m * self.n
        shape = (self.m, self.n)
        y1, y2 = shrink2d(w[:mn].reshape(shape, order="F"), w[mn:].reshape(shape, order="F"),
                          self.weight / params.beta)
        return np.concatenate((y1.ravel(order="F"), y2.ravel(order="F")))

    def value(self, y):
        mn = self.m * self.n
        return self.weight * float(np.sum(np.hypot(y[:mn], y[mn:])))


def shrink_optimality_error(w1, w2, y1, y2, beta, weight=1.0) -> float:
    """Worst violation of the isotropic shrinkage optimality conditions.

    ``y != 0``: ``w - y = (weight/beta) y/||y||``; ``y = 0``: ``||w|| <= weight/beta``.
    """
    t = weight / beta
    ny = np.hypot(y1, y2)
    nw = np.hypot(w1, w2)
    nz = ny > 0
    err = 0.0
    if np.any(nz):
        e1 = w1[nz] - y1[nz] - t * y1[nz] / ny[nz]
        e2 = w2[nz] - y2[nz] - t * y2[nz] / ny[nz]
        err = max(err, float(np.max(np.hypot(e1, e2))))
    if np.any(~nz):
        err = max(err, float(np.max(nw[~nz] - t)))
    return err


class DenseProxYOracle:
    """Exact y-step for small dense problems.

    ``kind="quadratic"``: ``g(y) = 0.5 <R y, y> - <s, y>`` (dense solve).
    ``kind="l1"``: ``g(y) = lam * ||y||_1`` with ``B = I``, ``H = 0``.
    """

    def __init__(self, kind="quadratic", R=None, s=None, lam=None):
        if kind not in ("quadratic", "l1"):
            raise ConfigurationError(f"unsupported g form {kind!r}")
        self.kind = kind
        if kind == "quadratic":
            if R is None:
                raise ConfigurationError("quadratic g needs R")
            self.R = np.array(R, dtype=np.float64, ndmin=2)
            self.s = np.zeros(self.R.shape[0]) if s is None else np.asarray(s, dtype=np.float64)
        else:
            if lam is None or lam < 0:
                raise ConfigurationError("l1 g needs lam >= 0")
            self.lam = float(lam)

    def value(self, y):
        if self.kind == "quadratic":
            return 0.5 * float(y @ self.R @ y) - float(self.s @ y)
        return self.lam * float(np.sum(np.abs(y)))

    def grad(self, y):
        if self.kind != "quadratic":
            raise ConfigurationError("l1 g is not differentiable")
        return self.R @ y - self.s

    def __call__(self, y_prev, x_tilde, gamma_half, problem, params, H):
        beta = params.beta
        A, B, b = problem.A, problem.B, problem.b
        if self.kind == "l1":
            if not _is_identity(B) or not _is_zero(H):
                raise ConfigurationError("l1 y-oracle needs B = I and H = 0")
            v = b - A._apply(x_tilde) + gamma_half / beta
            return soft_threshold(v, self.lam / beta)
        Bm = B.matrix if hasattr(B, "matrix") else materialize(B, max_dim=1024)
        Hm = np.zeros((B.in_dim, B.in_dim)) if _is_zero(H) else (
            H.matrix if hasattr(H, "matrix") else materialize(H, max_dim=1024))
        lhs = self.R + beta * Bm.T @ Bm + Hm
        rhs = self.s + Bm.T @ (gamma_half - beta * (A._apply(x_tilde) - b)) + Hm @ y_prev
        return np.linalg.solve(lhs, rhs)
