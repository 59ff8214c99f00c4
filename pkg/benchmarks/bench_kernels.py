"""Time the numba and numpy image kernels side by side.

Usage: python3 benchmarks/bench_kernels.py [--sizes 64 128 256] [--repeat 20]

Both backends are called directly (``*_nb`` / ``*_np``), so the
``SYMADMM_DISABLE_NUMBA`` flag does not matter here. The first numba call of
each kernel is a warm-up and is not timed.
"""

import argparse
import timeit

import numpy as np

from symadmm import kernels
from symadmm.tvapp import gaussian_kernel


def cases(size, rng):
    # column-major, the layout the solver passes in
    img = np.asfortranarray(rng.standard_normal((size, size)))
    d1, d2 = (np.asfortranarray(a) for a in rng.standard_normal((2, size, size)))
    ker = gaussian_kernel(9, 5.0)
    return {
        "conv_periodic": ((img, ker), kernels.conv_periodic_np, kernels.conv_periodic_nb),
        "corr_periodic": ((img, ker), kernels.corr_periodic_np, kernels.corr_periodic_nb),
        "diff_forward": ((img,), kernels.diff_forward_np, kernels.diff_forward_nb),
        "diff_adjoint": ((d1, d2), kernels.diff_adjoint_np, kernels.diff_adjoint_nb),
        "shrink2d": ((d1, d2, 0.5), kernels.shrink2d_np, kernels.shrink2d_nb),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<15}{'size':>6}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}  max|diff|")
    for size in args.sizes:
        for name, (inputs, f_np, f_nb) in cases(size, rng).items():
            ref, got = f_np(*inputs), f_nb(*inputs)
            if isinstance(ref, tuple):
                err = max(float(np.max(np.abs(a - b))) for a, b in zip(ref, got))
            else:
                err = float(np.max(np.abs(ref - got)))
            t_np = min(timeit.repeat(lambda: f_np(*inputs), number=1, repeat=args.repeat)) * 1e3
            t_nb = min(timeit.repeat(lambda: f_nb(*inputs), number=1, repeat=args.repeat)) * 1e3
            print(f"{name:<15}{size:>6}{t_np:>11.3f}{t_nb:>11.3f}{t_np / t_nb:>9.1f}  {err:.1e}")


if __name__ == "__main__":
    main()
