"""Small dense QP instances for desk-scale runs and cross-checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .admm import Problem
from .linop import DenseOperator, Identity, dense_spd
from .oracles import CGXOracle, DenseProxYOracle, ExactXOracle, QuadraticF

__all__ = ["QPData", "make_qp", "kkt_solution"]


@dataclass
class QPData:
    P: np.ndarray
    r: np.ndarray
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    R: np.ndarray = None
    s: np.ndarray = None
    lam: float = None


def _spd(rng, d, shift=1.0):
    Q = rng.standard_normal((d, d))
    return Q.T @ Q / d + shift * np.eye(d)


def make_qp(n=4, p=3, m=3, seed=0, g="quadratic", lam=0.1, exact=False, H=None, G=None):
    """Random strongly convex instance of ``min f(x) + g(y) s.t. Ax + By = b``.

    ``g="quadratic"`` uses a dense SPD ``R``; ``g="l1"`` uses ``lam ||y||_1``
    with ``B = I`` (so ``p = m``). ``exact=True`` swaps in the direct x-oracle.
    """
    rng = np.random.default_rng(seed)
    P = _spd(rng, n)
    r = rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    if g == "l1":
        p = m
        B = np.eye(m)
    else:
        B = rng.standard_normal((m, p)) + 2.0 * np.eye(m, p)
    b = rng.standard_normal(m)
    data = QPData(P, r, A, B, b)
    f = QuadraticF(dense_spd(P, name="P"), r)
    if g == "l1":
        data.lam = float(lam)
        y_oracle = DenseProxYOracle("l1", lam=lam)
        B_op = Identity(m)
        B_op.matrix = np.eye(m)
    else:
        data.R = _spd(rng, p)
        data.s = rng.standard_normal(p)
        y_oracle = DenseProxYOracle("quadratic", R=data.R, s=data.s)
        B_op = DenseOperator(B, name="B")
    x_oracle = ExactXOracle(f) if exact else CGXOracle(f, proximal=True)
    problem = Problem(
        A=DenseOperator(A, name="A"), B=B_op, b=b,
        x_oracle=x_oracle, y_oracle=y_oracle,
        G=None if G is None else dense_spd(G, name="G"),
        H=None if H is None else dense_spd(H, name="H"),
        f=f, g=y_oracle, reference_x_oracle=ExactXOracle(f),
        name=f"qp-{n}x{p}x{m}-{g}-seed{seed}",
    )
    return problem, data


def kkt_solution(data: QPData):
    """Primal-dual solution of the quadratic-g instance by one dense KKT solve."""
    if data.R is None:
        raise ValueError("kkt_solution needs quadratic g")
    n, p, m = data.P.shape[0], data.R.shape[0], data.A.shape[0]
    K = np.zeros((n + p + m, n + p + m))
    K[:n, :n] = data.P
    K[:n, n + p:] = -data.A.T
    K[n:n + p, n:n + p] = data.R
    K[n:n + p, n + p:] = -data.B.T
    K[n + p:, :n] = data.A
    K[n + p:, n:n + p] = data.B
    rhs = np.concatenate((data.r, data.s, data.b))
    sol = np.linalg.solve(K, rhs)
    return sol[:n], sol[n:n + p], sol[n + p:]
