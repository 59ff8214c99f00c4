"""Matrix-free linear operators.

Vectors are flat float64 arrays. Image operators work on images flattened in
column-major order with a recorded ``(m, n)`` shape.
"""

from __future__ import annotations

import os
from typing import Callable, Optional

import numpy as np

from . import kernels

__all__ = [
    "DimensionError",
    "AdjointMismatch",
    "LinearOperator",
    "SpdOperator",
    "DenseOperator",
    "Identity",
    "ScaledIdentity",
    "Zero",
    "PeriodicConvolution",
    "PeriodicDifference",
    "seminorm_sq",
    "materialize",
    "adjoint_error",
    "load_dense",
]

ADJOINT_RTOL = 1e-10
VALIDATE = os.environ.get("SYMADMM_VALIDATE_OPS", "").strip().lower() in ("1", "true", "yes", "on")


class DimensionError(ValueError):
    """Operand dimensions do not line up."""

    def __init__(self, what, expected, got):
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected dimension {expected}, got {got}")


class AdjointMismatch(ValueError):
    pass


def _vec(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != dim:
        raise DimensionError(what, dim, x.shape[0] if x.ndim == 1 else x.shape)
    return x


class LinearOperator:
    """Linear map given by forward and adjoint callables.

    Supports ``A @ B`` (composition), ``A + B``, ``alpha * A`` and ``A.T``.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        apply: Callable[[np.ndarray], np.ndarray],
        adjoint_apply: Callable[[np.ndarray], np.ndarray],
        name: str = "op",
        validate: Optional[bool] = None,
    ):
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"{name}: dimensions must be positive, got {in_dim}->{out_dim}")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self._apply = apply
        self._adjoint = adjoint_apply
        self.name = name
        if VALIDATE if validate is None else validate:
            err = adjoint_error(self, trials=5)
            if err > ADJOINT_RTOL:
                raise AdjointMismatch(f"{name}: adjoint identity off by {err:.3e}")

    @property
    def shape(self):
        return (self.out_dim, self.in_dim)

    def apply(self, x):
        return self._apply(_vec(x, self.in_dim, f"{self.name}.apply"))

    def adjoint_apply(self, y):
        return self._adjoint(_vec(y, self.out_dim, f"{self.name}.adjoint_apply"))

    __call__ = apply

    @property
    def T(self) -> "LinearOperator":
        return LinearOperator(self.out_dim, self.in_dim, self._adjoint, self._apply,
                              name=f"{self.name}^T", validate=False)

    def __matmul__(self, other):
        if isinstance(other, LinearOperator):
            return compose(self, other)
        return self.apply(other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(-1.0, other))

    def __neg__(self):
        return scale(-1.0, self)

    def __rmul__(self, alpha):
        return scale(alpha, self)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} {self.out_dim}x{self.in_dim}>"


class SpdOperator(LinearOperator):
    """Square operator known to be symmetric positive semidefinite.

    ``inverse_apply`` is present only for positive definite instances.
    """

    def __init__(self, dim, apply, inverse_apply=None, name="spd", validate=None):
        super().__init__(dim, dim, apply, apply, name=name, validate=validate)
        self._inverse = inverse_apply

    @property
    def has_inverse(self):
        return self._inverse is not None

    def inverse_apply(self, x):
        if self._inverse is None:
            raise TypeError(f"{self.name} has no inverse_apply")
        return self._inverse(_vec(x, self.in_dim, f"{self.name}.inverse_apply"))

    @property
    def T(self):
        return self


def compose(A: LinearOperator, B: LinearOperator) -> LinearOperator:
    """``A @ B``: apply B first."""
    if A.in_dim != B.out_dim:
        raise DimensionError(f"compose {A.name}@{B.name}", A.in_dim, B.out_dim)
    return LinearOperator(
        B.in_dim, A.out_dim,
        lambda x: A._apply(B._apply(x)),
        lambda y: B._adjoint(A._adjoint(y)),
        name=f"({A.name}@{B.name})",
    )


def add(A: LinearOperator, B: LinearOperator) -> LinearOperator:
    if A.shape != B.shape:
        raise DimensionError(f"add {A.name}+{B.name}", A.shape, B.shape)
    if isinstance(A, SpdOperator) and isinstance(B, SpdOperator):
        return SpdOperator(A.in_dim, lambda x: A._apply(x) + B._apply(x),
                           name=f"({A.name}+{B.name})")
    return LinearOperator(
        A.in_dim, A.out_dim,
        lambda x: A._apply(x) + B._apply(x),
        lambda y: A._adjoint(y) + B._adjoint(y),
        name=f"({A.name}+{B.name})",
    )


def scale(alpha: float, A: LinearOperator) -> LinearOperator:
    alpha = float(alpha)
    if isinstance(A, SpdOperator) and alpha >= 0:
        inv = None
        if A.has_inverse and alpha > 0:
            inv = lambda x: A._inverse(x) / alpha  # noqa: E731
        return SpdOperator(A.in_dim, lambda x: alpha * A._apply(x), inverse_apply=inv,
                           name=f"{alpha:g}*{A.name}")
    return LinearOperator(
        A.in_dim, A.out_dim,
        lambda x: alpha * A._apply(x),
        lambda y: alpha * A._adjoint(y),
        name=f"{alpha:g}*{A.name}",
    )


class DenseOperator(LinearOperator):
    def __init__(self, matrix, name="dense"):
        mat = np.array(matrix, dtype=np.float64, ndmin=2)
        self.matrix = mat
        super().__init__(mat.shape[1], mat.shape[0], mat.dot, mat.T.dot, name=name)


def dense_spd(matrix, name="dense_spd", check=True) -> SpdOperator:
    """Symmetric PSD operator from a dense matrix; inverse via Cholesky when PD."""
    mat = np.array(matrix, dtype=np.float64, ndmin=2)
    if check:
        if mat.shape[0] != mat.shape[1]:
            raise DimensionError(name, mat.shape[0], mat.shape[1])
        if not np.allclose(mat, mat.T, rtol=0, atol=1e-12 * max(1.0, np.abs(mat).max())):
            raise ValueError(f"{name}: matrix is not symmetric")
    inv = None
    try:
        import scipy.linalg as sla

        factor = sla.cho_factor(mat)
        inv = lambda x: sla.cho_solve(factor, x)  # noqa: E731
    except np.linalg.LinAlgError:
        pass
    op = SpdOperator(mat.shape[0], mat.dot, inverse_apply=inv, name=name)
    op.matrix = mat
    return op


class Identity(SpdOperator):
    def __init__(self, dim):
        super().__init__(dim, lambda x: x.copy(), inverse_apply=lambda x: x.copy(), name="I")


class ScaledIdentity(SpdOperator):
    """``c * I``; positive definite iff ``c > 0``."""

    def __init__(self, dim, c):
        c = float(c)
        if c < 0:
            raise ValueError("ScaledIdentity needs c >= 0")
        self.c = c
        inv = (lambda x: x / c) if c > 0 else None
        super().__init__(dim, lambda x: c * x, inverse_apply=inv, name=f"{c:g}I")


class Zero(SpdOperator):
    def __init__(self, dim):
        super().__init__(dim, lambda x: np.zeros_like(x), name="0")


class PeriodicConvolution(LinearOperator):
    """2-D periodic convolution of an ``(m, n)`` image with a small kernel."""

    def __init__(self, m, n, kernel, name="K"):
        kernel = np.ascontiguousarray(kernel, dtype=np.float64)
        if kernel.ndim != 2:
            raise ValueError("kernel must be 2-D")
        self.m, self.n = int(m), int(n)
        self.kernel = kernel
        shape = (self.m, self.n)

        def fwd(x):
            return kernels.conv_periodic(x.reshape(shape, order="F"), kernel).ravel(order="F")

        def adj(y):
            return kernels.corr_periodic(y.reshape(shape, order="F"), kernel).ravel(order="F")

        super().__init__(self.m * self.n, self.m * self.n, fwd, adj, name=name)


class PeriodicDifference(LinearOperator):
    """Stacked forward differences ``(D1; D2)`` with periodic wrap.

    ``D1`` differences along the first image axis (rows index ``i``), ``D2``
    along the second. Output is ``[D1 x, D2 x]``, each block column-major.
    """

    def __init__(self, m, n, name="D"):
        self.m, self.n = int(m), int(n)
        shape = (self.m, self.n)
        mn = self.m * self.n

        def fwd(x):
            d1, d2 = kernels.diff_forward(x.reshape(shape, order="F"))
            return np.concatenate((d1.ravel(order="F"), d2.ravel(order="F")))

        def adj(y):
            d1 = y[:mn].reshape(shape, order="F")
            d2 = y[mn:].reshape(shape, order="F")
            return kernels.diff_adjoint(d1, d2).ravel(order="F")

        super().__init__(mn, 2 * mn, fwd, adj, name=name)


def seminorm_sq(Q: LinearOperator, x) -> float:
    """``<Q x, x>``; exactly 0 for ``x = 0``."""
    x = _vec(x, Q.in_dim, f"seminorm_sq[{Q.name}]")
    if Q.in_dim != Q.out_dim:
        raise DimensionError(f"seminorm_sq[{Q.name}] needs a square operator", Q.in_dim, Q.out_dim)
    if not np.any(x):
        return 0.0
    return float(np.dot(Q._apply(x), x))


def materialize(op: LinearOperator, adjoint=False, max_dim=64) -> np.ndarray:
    """Dense matrix of ``op`` (or of its adjoint), column by column."""
    if max(op.in_dim, op.out_dim) > max_dim:
        raise ValueError(f"{op.name}: refusing to materialize {op.shape} (max_dim={max_dim})")
    n_cols = op.out_dim if adjoint else op.in_dim
    fn = op._adjoint if adjoint else op._apply
    cols = []
    e = np.zeros(n_cols)
    for j in range(n_cols):
        e[j] = 1.0
        cols.append(fn(e.copy()))
        e[j] = 0.0
    return np.column_stack(cols)


def adjoint_error(op: LinearOperator, trials=100, rng=None) -> float:
    """Worst relative gap in ``<A x, y> = <x, A^T y>`` over random probes."""
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.in_dim)
        y = rng.standard_normal(op.out_dim)
        Ax = op._apply(x)
        Aty = op._adjoint(y)
        lhs = float(np.dot(Ax, y))
        rhs = float(np.dot(x, Aty))
        scale_ = np.linalg.norm(Ax) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(Aty)
        if scale_ > 0:
            worst = max(worst, abs(lhs - rhs) / scale_)
    return worst


def load_dense(path, name=None) -> DenseOperator:
    """Dense operator from a whitespace-delimited text file (one row per line)."""
    mat = np.loadtxt(path, dtype=np.float64, ndmin=2)
    return DenseOperator(mat, name=name or os.path.basename(str(path)))
