import numpy as np
import pytest

from reference_impls import dense_difference, direct_conv_periodic
from symadmm.admm import initial_state, pointwise_residuals, solve, step
from symadmm.linop import adjoint_error, materialize
from symadmm.region import AccelParams
from symadmm.tvapp import (PSNR_CAP, TVProblemSpec, assemble_tv_problem, degrade, finite_difference_D,
                           gaussian_blur_K, gaussian_kernel, gaussian_noise, make_instance, psnr, read_pgm,
                           read_raw, restore, synthetic_image, tv_norm_iso, tv_objective, write_pgm,
                           write_raw)

from conftest import TV_SIGMA_HAT


def _flat(img):
    return np.asarray(img).ravel(order="F")


def _img(vec, m, n):
    return np.asarray(vec).reshape((m, n), order="F")


# -- operators -----------------------------------------------------------------

def test_difference_of_constant_is_zero():
    D = finite_difference_D(5, 7)
    assert np.all(D.apply(np.full(35, 3.25)) == 0.0)


def test_difference_single_pixel():
    D = finite_difference_D(1, 1)
    assert np.array_equal(D.apply(np.array([2.0])), [0.0, 0.0])


def test_difference_matches_hand_built_matrix(rng):
    for m, n in ((3, 3), (4, 2), (2, 5)):
        assert np.allclose(materialize(finite_difference_D(m, n), max_dim=2 * m * n), dense_difference(m, n))


def test_DtD_is_periodic_laplacian():
    m, n = 4, 3
    D = dense_difference(m, n)
    L = materialize(finite_difference_D(m, n), max_dim=24)
    lap = L.T @ L
    assert np.allclose(lap, D.T @ D)
    assert np.allclose(np.diag(lap), 4.0)
    assert np.allclose(lap.sum(axis=1), 0.0)


def test_blur_preserves_constants_and_stamps_kernel():
    m, n = 11, 13
    K = gaussian_blur_K(m, n)
    assert np.allclose(K.apply(np.ones(m * n)), 1.0, atol=1e-14)
    delta = np.zeros((m, n))
    delta[5, 6] = 1.0
    out = _img(K.apply(_flat(delta)), m, n)
    assert np.allclose(out[1:10, 2:11], gaussian_kernel(9, 5.0), atol=1e-15)
    assert abs(out.sum() - 1.0) <= 1e-14


def test_blur_matches_direct_loop(rng):
    img = rng.standard_normal((8, 8))
    K = gaussian_blur_K(8, 8)
    ref = direct_conv_periodic(img, gaussian_kernel(9, 5.0))
    assert np.allclose(_img(K.apply(_flat(img)), 8, 8), ref, atol=1e-13)


def test_blur_is_self_adjoint():
    # symmetric kernel -> K' = K
    K = materialize(gaussian_blur_K(6, 6), max_dim=36)
    assert np.allclose(K, K.T, atol=1e-15)


@pytest.mark.parametrize("shape", [(8, 8), (5, 9), (1, 4)])
def test_adjoint_identities(shape):
    m, n = shape
    assert adjoint_error(finite_difference_D(m, n), trials=100, rng=1) <= 1e-12
    assert adjoint_error(gaussian_blur_K(m, n), trials=100, rng=2) <= 1e-12


def test_kernel_validation():
    k = gaussian_kernel(3, 1.0)
    w = np.exp(-0.5)
    assert np.allclose(k, np.outer([w, 1, w], [w, 1, w]) / (1 + 2 * w) ** 2)
    with pytest.raises(ValueError):
        gaussian_kernel(4, 1.0)
    with pytest.raises(ValueError):
        gaussian_kernel(3, 0.0)


# -- TV norm -------------------------------------------------------------------

def test_tv_norm_two_by_two():
    x = np.array([[0.0, 1.0], [2.0, 3.0]])
    # every pixel has |d1| = 2, |d2| = 1 under periodic wrap
    assert tv_norm_iso(x) == pytest.approx(4 * np.sqrt(5.0))


def test_tv_norm_matches_dense_and_is_homogeneous(rng):
    m, n = 5, 4
    x = rng.standard_normal((m, n))
    d = dense_difference(m, n) @ _flat(x)
    assert tv_norm_iso(x) == pytest.approx(np.sum(np.hypot(d[:m * n], d[m * n:])), rel=1e-13)
    assert tv_norm_iso(-2.5 * x) == pytest.approx(2.5 * tv_norm_iso(x), rel=1e-13)
    assert tv_norm_iso(x + 7.0) == pytest.approx(tv_norm_iso(x), rel=1e-12)


# -- assembly ------------------------------------------------------------------

def test_assembly_defaults_and_constraint_residual(rng):
    inst = make_instance(6)
    problem = assemble_tv_problem(inst.spec, inst.degraded, beta=2.0)
    assert (problem.n, problem.p, problem.m) == (36, 72, 72)
    v = rng.standard_normal(36)
    assert np.allclose(problem.prox_G(2.0).apply(v), v / 2.0)
    assert TVProblemSpec() == TVProblemSpec(1e3, 9, 5.0, 1e-4, 0)
    params = AccelParams.with_default_tolerance(0.8, 1.12, sigma_hat=TV_SIGMA_HAT, beta=2.0)
    states = [initial_state(problem)]
    for _ in range(5):
        states.append(step(states[-1], problem, params))
    D = finite_difference_D(6, 6)
    for prev, s in zip(states, states[1:]):
        # w_k = A x~ + B y - b = y - D x~
        w = pointwise_residuals(prev, s, problem, params).w
        assert np.allclose(w, s.y - D.apply(s.x_tilde), atol=1e-10 * (1 + np.linalg.norm(s.y)))


def test_problem_parameter_validation():
    for bad in ({"mu": 0.0}, {"kernel_size": 4}, {"kernel_std": -1.0}, {"noise_variance": -1e-3}):
        with pytest.raises(ValueError):
            TVProblemSpec(**bad)


def test_exact_solution_beats_observation_objective():
    inst = make_instance(16)
    problem = assemble_tv_problem(inst.spec, inst.degraded, beta=10.0, proximal_system=True)
    rep = solve(problem, AccelParams(0.0, 1.0, beta=10.0), tol=1e-6, max_outer=5000)
    assert rep.converged
    assert tv_objective(problem, rep.state.x_tilde) <= tv_objective(problem, _flat(inst.degraded))


# -- degradation and quality -----------------------------------------------------

def test_degrade_without_noise_is_blur():
    spec = TVProblemSpec(noise_variance=0.0)
    img = synthetic_image(10, 12)
    K = gaussian_blur_K(10, 12)
    assert np.allclose(degrade(img, spec), _img(K.apply(_flat(img)), 10, 12))


def test_degrade_is_deterministic_and_seeded():
    img = synthetic_image(16, 16)
    a = degrade(img, TVProblemSpec(seed=3))
    assert np.array_equal(a, degrade(img, TVProblemSpec(seed=3)))
    assert not np.array_equal(a, degrade(img, TVProblemSpec(seed=4)))


def test_noise_variance_at_256():
    spec = TVProblemSpec(noise_variance=1e-2, seed=7)
    img = synthetic_image(256, 256)
    noise = degrade(img, spec) - degrade(img, TVProblemSpec(noise_variance=0.0))
    assert abs(noise.var() / 1e-2 - 1.0) < 0.2
    assert abs(noise.mean()) < 0.01


def test_noise_column_major_fill():
    z = gaussian_noise((3, 2), 0)
    flat = gaussian_noise((6,), 0)
    assert np.array_equal(_flat(z), flat)


def test_synthetic_image_range():
    img = synthetic_image(32, 32)
    assert img.min() >= 0.0 and img.max() <= 1.0
    assert len(np.unique(img)) >= 4


def test_psnr_examples():
    ref = np.ones((4, 4))
    assert psnr(ref, ref) == PSNR_CAP
    assert psnr(ref, ref + 0.1) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        psnr(ref, np.ones((4, 5)))


def test_psnr_monotone_in_noise_level():
    ref = synthetic_image(32, 32)
    for seed in range(10):
        z = gaussian_noise((32, 32), seed)
        vals = [psnr(ref, ref + s * z) for s in (0.01, 0.05, 0.2)]
        assert vals[0] > vals[1] > vals[2]


# -- I/O -----------------------------------------------------------------------

def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (7, 5)) / 255.0
    write_pgm(tmp_path / "a.pgm", img)
    assert np.allclose(read_pgm(tmp_path / "a.pgm"), img, atol=1e-12)
    write_pgm(tmp_path / "b.pgm", np.array([[-1.0, 2.0]]))
    assert np.array_equal(read_pgm(tmp_path / "b.pgm"), [[0.0, 1.0]])


def test_pgm_16bit_and_comments(tmp_path):
    data = b"P5\n# comment\n2 1\n65535\n" + np.array([0, 65535], dtype=">u2").tobytes()
    (tmp_path / "c.pgm").write_bytes(data)
    assert np.array_equal(read_pgm(tmp_path / "c.pgm"), [[0.0, 1.0]])
    (tmp_path / "d.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "d.pgm")


def test_raw_round_trip(tmp_path, rng):
    img = rng.standard_normal((3, 4)) * 5
    write_raw(tmp_path / "x.f64", img)
    assert np.array_equal(read_raw(tmp_path / "x.f64", (3, 4)), img)
    assert (tmp_path / "x.f64").stat().st_size == 96


def test_restoration_32_improves_psnr():
    inst = make_instance(32)
    res = restore(inst, AccelParams.with_default_tolerance(0.8, 1.12, sigma_hat=TV_SIGMA_HAT))
    assert res.report.converged
    assert res.psnr_restored > res.psnr_degraded + 5.0
    assert res.image.shape == (32, 32)
