"""TV/L2 deblurring as a two-block problem.

The model is ``min (mu/2)||Kx - c||^2 + sum_ij ||(Dx)_ij||`` written as
``f(x) + g(y)`` with ``y = Dx``, i.e. ``A = -D``, ``B = I``, ``b = 0``.
Images are ``(m, n)`` float arrays with intensities in ``[0, 1]``; solver
vectors are their column-major flattenings.

Noise is generated from a Philox-4x64 counter stream: each raw 64-bit word is
mapped to a uniform in ``(0, 1]`` via its top 53 bits, and consecutive pairs
``(u1, u2)`` become ``sqrt(-2 ln u1) * cos(2 pi u2)`` and
``sqrt(-2 ln u1) * sin(2 pi u2)`` (Box-Muller), filled column-major.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .admm import Problem, RunReport, solve
from .linop import Identity, LinearOperator, PeriodicConvolution, PeriodicDifference, SpdOperator, scale
from .oracles import CGXOracle, ExactXOracle, QuadraticF, Shrink2DYOracle
from .region import AccelParams

__all__ = [
    "TVProblemSpec",
    "TVInstance",
    "finite_difference_D",
    "gaussian_kernel",
    "gaussian_blur_K",
    "tv_norm_iso",
    "synthetic_image",
    "gaussian_noise",
    "degrade",
    "make_instance",
    "psnr",
    "assemble_tv_problem",
    "restore",
    "tv_objective",
    "Restoration",
    "read_pgm",
    "write_pgm",
    "write_raw",
    "read_raw",
    "PSNR_CAP",
]

PSNR_CAP = 99.0


@dataclass(frozen=True)
class TVProblemSpec:
    mu: float = 1e3
    kernel_size: int = 9
    kernel_std: float = 5.0
    noise_variance: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel size must be odd and positive, got {self.kernel_size}")
        if not self.kernel_std > 0:
            raise ValueError(f"kernel std must be positive, got {self.kernel_std}")
        if not self.noise_variance >= 0:
            raise ValueError(f"noise variance must be nonnegative, got {self.noise_variance}")


def finite_difference_D(m, n) -> LinearOperator:
    """Periodic forward differences, ``mn -> 2mn``, output ``[D1 x; D2 x]``."""
    if m < 1 or n < 1:
        raise ValueError("image dimensions must be positive")
    return PeriodicDifference(m, n)


def gaussian_kernel(size, std) -> np.ndarray:
    """Gaussian sampled at integer offsets from the center, normalized to sum 1."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {size}")
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    t = np.arange(size) - size // 2
    g = np.exp(-(t**2) / (2.0 * std * std))
    k = np.outer(g, g)
    return k / k.sum()


def gaussian_blur_K(m, n, size=9, std=5.0) -> LinearOperator:
    return PeriodicConvolution(m, n, gaussian_kernel(size, std))


def tv_norm_iso(x) -> float:
    """Isotropic TV of an ``(m, n)`` image with periodic differences."""
    x = np.asarray(x, dtype=np.float64)
    d1 = np.roll(x, -1, axis=0) - x
    d2 = np.roll(x, -1, axis=1) - x
    return float(np.sum(np.hypot(d1, d2)))


def synthetic_image(m, n) -> np.ndarray:
    """Deterministic piecewise-constant test image in ``[0, 1]``."""
    i = (np.arange(m)[:, None] + 0.5) / m
    j = (np.arange(n)[None, :] + 0.5) / n
    img = np.full((m, n), 0.2)
    img[(i > 0.15) & (i < 0.55) & (j > 0.1) & (j < 0.45)] = 0.8
    img[(i - 0.65) ** 2 + (j - 0.65) ** 2 < 0.06] = 0.5
    img[(i > 0.7) & (i < 0.9) & (j > 0.15) & (j < 0.35)] = 1.0
    img[(i > 0.2) & (i < 0.3) & (j > 0.6) & (j < 0.9)] = 0.0
    return img


def gaussian_noise(shape, seed) -> np.ndarray:
    """Standard normal field from Philox + Box-Muller (see module docstring)."""
    size = int(np.prod(shape))
    bitgen = np.random.Philox(int(seed))
    pairs = (size + 1) // 2
    raw = bitgen.random_raw(2 * pairs)
    uni = ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u1, u2 = uni[0::2], uni[1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs)
    z[0::2] = rad * np.cos(2.0 * np.pi * u2)
    z[1::2] = rad * np.sin(2.0 * np.pi * u2)
    return z[:size].reshape(shape, order="F")


def degrade(original, spec: TVProblemSpec) -> np.ndarray:
    """Blur with the configured kernel, then add seeded Gaussian noise."""
    original = np.asarray(original, dtype=np.float64)
    m, n = original.shape
    K = gaussian_blur_K(m, n, spec.kernel_size, spec.kernel_std)
    blurred = K.apply(original.ravel(order="F")).reshape((m, n), order="F")
    if spec.noise_variance == 0:
        return blurred
    return blurred + math.sqrt(spec.noise_variance) * gaussian_noise((m, n), spec.seed)


def psnr(reference, restored) -> float:
    """``10 log10(max(reference)^2 / MSE)``, capped at 99 dB."""
    reference = np.asarray(reference, dtype=np.float64)
    restored = np.asarray(restored, dtype=np.float64)
    if reference.shape != restored.shape:
        raise ValueError(f"psnr: shapes differ, {reference.shape} vs {restored.shape}")
    mse = float(np.mean((reference - restored) ** 2))
    peak = float(np.max(np.abs(reference)))
    if mse == 0.0:
        return PSNR_CAP
    if peak == 0.0:
        return -math.inf
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


@dataclass
class TVInstance:
    original: np.ndarray
    degraded: np.ndarray
    spec: TVProblemSpec
    name: str = "synthetic"

    @property
    def shape(self):
        return self.original.shape


def make_instance(m, n=None, spec: TVProblemSpec | None = None, original=None, name=None) -> TVInstance:
    """Synthetic (or supplied) original plus its degraded observation."""
    spec = spec or TVProblemSpec()
    if original is None:
        n = m if n is None else n
        original = synthetic_image(m, n)
        name = name or f"synthetic{m}x{n}"
    return TVInstance(np.asarray(original, dtype=np.float64), degrade(original, spec), spec, name or "image")


def assemble_tv_problem(spec: TVProblemSpec, degraded, beta=1.0, proximal_system=False) -> Problem:
    """Problem with ``A = -D``, ``B = I``, ``b = 0``, ``G = I/beta``, ``H = 0``.

    The x-oracle runs CG on ``mu K'K + beta D'D`` (``proximal_system=False``)
    or on the same system plus ``G`` (needed for zero-tolerance runs).
    """
    c = np.asarray(degraded, dtype=np.float64)
    m, n = c.shape
    mn = m * n
    K = gaussian_blur_K(m, n, spec.kernel_size, spec.kernel_std)
    D = finite_difference_D(m, n)
    mu = float(spec.mu)
    cvec = c.ravel(order="F")

    def P_apply(x):
        return mu * K._adjoint(K._apply(x))

    P = SpdOperator(mn, P_apply, name="muK'K")
    f = QuadraticF(P, mu * K._adjoint(cvec), 0.5 * mu * float(cvec @ cvec))
    f.K, f.c, f.mu = K, cvec, mu
    y_oracle = Shrink2DYOracle(m, n)
    return Problem(
        A=scale(-1.0, D), B=Identity(2 * mn), b=np.zeros(2 * mn),
        x_oracle=CGXOracle(f, proximal=proximal_system), y_oracle=y_oracle,
        f=f, g=y_oracle, reference_x_oracle=ExactXOracle(f),
        name=f"tv-{m}x{n}",
    )


def tv_objective(problem: Problem, x) -> float:
    """``(mu/2)||Kx - c||^2 + TV(x)`` of a flattened image."""
    m, n = problem.g.m, problem.g.n
    return problem.f.value(x) + tv_norm_iso(np.asarray(x).reshape((m, n), order="F"))


@dataclass
class Restoration:
    image: np.ndarray
    report: RunReport
    psnr_degraded: float
    psnr_restored: float
    extra: dict = field(default_factory=dict)


def restore(instance: TVInstance, params: AccelParams, tol=1e-2, max_outer=2000, max_inner=None,
            monitors=(), proximal_system=False) -> Restoration:
    problem = assemble_tv_problem(instance.spec, instance.degraded, params.beta, proximal_system)
    report = solve(problem, params, tol=tol, max_outer=max_outer, max_inner=max_inner, monitors=monitors)
    img = report.state.x_tilde.reshape(instance.shape, order="F")
    return Restoration(img, report, psnr(instance.original, instance.degraded),
                       psnr(instance.original, img))


# --------------------------------------------------------------------------
# image I/O

def _pgm_tokens(data: bytes, count: int):
    """First ``count`` header tokens of a PNM file and the offset after them."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Binary PGM (P5) to an ``(m, n)`` array in ``[0, 1]`` (value / maxval)."""
    data = Path(path).read_bytes()
    tokens, pos = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    n, m, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = m * n
    pix = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    if pix.size != count:
        raise ValueError(f"{path}: expected {count} pixels")
    return pix.reshape((m, n)).astype(np.float64) / maxval


def write_pgm(path, img):
    """Clamp to ``[0, 1]`` and write as 8-bit P5 with ``round(255 x)``."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    m, n = img.shape
    pix = np.rint(img * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{n} {m}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def write_raw(path, img):
    """Unclamped little-endian float64 dump, row-major, no header."""
    np.asarray(img, dtype="<f8").tofile(path)


def read_raw(path, shape) -> np.ndarray:
    return np.fromfile(path, dtype="<f8").reshape(shape)
