import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cfgan import cfd
from cfgan import diffcore as dc
from cfgan.cfd import KernelSpec
from cfgan.diffcore import ContractError, Tensor
from cfgan.randdist import Rng, WeightingDistribution, characteristic_function, frequencies_from_base

from oracles import central_diff, ecf_brute, ecfd_brute, mmd2_brute


def test_ecf_single_sample_is_phase():
    a = np.array([[0.4, -1.1]])
    t = np.array([[0.7, 0.2], [-1.0, 3.0]])
    v = cfd.ecf(a, t)
    phase = t @ a[0]
    np.testing.assert_allclose(v.re.data[0], np.cos(phase), atol=1e-15)
    np.testing.assert_allclose(v.im.data[0], np.sin(phase), atol=1e-15)


def test_ecf_at_zero_frequency():
    X = np.random.default_rng(0).normal(size=(20, 3))
    v = cfd.ecf(X, np.zeros((1, 3)))
    assert v.re.item() == 1.0 and v.im.item() == 0.0


def test_ecf_gaussian_matches_analytic_cf():
    X = Rng(0).normal((10**6, 1))
    v = cfd.ecf(X, np.array([[1.0]]))
    assert abs(v.re.item() - math.exp(-0.5)) < 0.005
    assert abs(v.im.item()) < 0.005


def test_ecf_modulus_bounded():
    X = np.random.default_rng(1).normal(size=(30, 2)) * 5
    t = np.random.default_rng(2).normal(size=(50, 2)) * 3
    assert np.all(cfd.ecf(X, t).modulus_sq() <= 1 + 1e-12)


def test_ecf_dimension_mismatch():
    with pytest.raises(ContractError):
        cfd.ecf(np.ones((3, 2)), np.ones((1, 3)))
    with pytest.raises(ContractError):
        cfd.ecfd(np.ones((3, 2)), np.ones((3, 3)), np.ones((1, 2)))


def test_ecfd_identical_is_zero():
    X = np.random.default_rng(3).normal(size=(10, 2))
    assert cfd.ecfd(X, X, np.random.default_rng(4).normal(size=(4, 2))).item() == 0.0


def test_ecfd_antipodal_points():
    assert cfd.ecfd([[0.0]], [[math.pi]], [[1.0]]).item() == pytest.approx(4.0, abs=1e-15)


def test_ecfd_two_point_example():
    X, Y, T = [[0.0], [2.0]], [[1.0], [3.0]], [[1.0]]
    expected = abs((1 + cmath_exp(2)) / 2 - (cmath_exp(1) + cmath_exp(3)) / 2) ** 2
    assert cfd.ecfd(X, Y, T).item() == pytest.approx(expected, abs=1e-12)


def cmath_exp(a):
    import cmath
    return cmath.exp(1j * a)


@pytest.mark.parametrize("seed", range(10))
def test_ecfd_and_smoothed_match_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    m = int(rng.integers(1, 4))
    X = rng.normal(size=(int(rng.integers(1, 9)), m))
    Y = rng.normal(size=(int(rng.integers(1, 9)), m)) + 0.5
    T = rng.normal(size=(int(rng.integers(1, 5)), m))
    assert abs(cfd.ecfd(X, Y, T).item() - ecfd_brute(X, Y, T)) < 1e-12
    s = float(rng.uniform(0.5, 3))
    assert abs(cfd.ecfd_smoothed(X, Y, T, s).item() - ecfd_brute(X, Y, T, s)) < 1e-12


def test_smoothed_limit_and_identity():
    rng = np.random.default_rng(7)
    X, Y, T = rng.uniform(-3, 3, (12, 2)), rng.uniform(-3, 3, (9, 2)), rng.normal(size=(5, 2))
    assert abs(cfd.ecfd_smoothed(X, Y, T, 1e6).item() - cfd.ecfd(X, Y, T).item()) < 1e-6
    assert cfd.ecfd_smoothed(X, X, T, 0.7).item() == 0.0
    with pytest.raises(ContractError):
        cfd.ecfd_smoothed(X, Y, T, 0.0)


def test_normalized_divides_by_sigma_norm():
    rng = np.random.default_rng(8)
    X, Y = rng.normal(size=(6, 3)), rng.normal(size=(5, 3))
    eps = rng.normal(size=(4, 3))
    ones = WeightingDistribution.create("gaussian", 1.0, m=3)
    T = frequencies_from_base(ones, eps)
    assert cfd.ecfd_normalized(X, Y, ones, T).item() == pytest.approx(
        cfd.ecfd(X, Y, T).item() / math.sqrt(3), rel=1e-14)
    assert cfd.ecfd_normalized(X, X, ones, T).item() == 0.0


def test_normalized_with_doubled_sigma():
    rng = np.random.default_rng(9)
    X, Y = rng.normal(size=(5, 2)), rng.normal(size=(4, 2)) + 1
    eps = rng.normal(size=(3, 2))
    sigma = np.array([0.4, 1.1])
    dist = WeightingDistribution.create("gaussian", 2 * sigma)
    value = cfd.ecfd_normalized(X, Y, dist, frequencies_from_base(dist, eps)).item()
    expected = ecfd_brute(X, Y, eps * 2 * sigma) / (2 * np.linalg.norm(sigma))
    assert value == pytest.approx(expected, abs=1e-12)


def test_ecfd_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    X0, Y0 = rng.normal(size=(6, 2)), rng.normal(size=(5, 2))
    eps = rng.normal(size=(4, 2))
    dist = WeightingDistribution.create("gaussian", [0.8, 1.5], trainable=True)
    X = Tensor(X0, requires_grad=True)
    Y = Tensor(Y0, requires_grad=True)
    dc.backward(cfd.ecfd_normalized(X, Y, dist, frequencies_from_base(dist, eps)))

    def f(x=X0, y=Y0, ls=None):
        s = dist.scale if ls is None else np.exp(ls)
        return ecfd_brute(x, y, eps * s) / np.linalg.norm(s)

    np.testing.assert_allclose(X.grad, central_diff(lambda v: f(x=v), X0), atol=1e-8)
    np.testing.assert_allclose(Y.grad, central_diff(lambda v: f(y=v), Y0), atol=1e-8)
    np.testing.assert_allclose(dist.log_scale.grad,
                               central_diff(lambda v: f(ls=v), dist.log_scale.data.copy()), atol=1e-8)


# ----------------------------------------------------------------------- MMD

def test_mmd_identical_is_zero():
    X = np.random.default_rng(11).normal(size=(7, 2))
    for k in (KernelSpec.rbf(1.0), KernelSpec.rq(), KernelSpec.poly3()):
        assert abs(cfd.mmd2(X, X, k, biased=True)) < 1e-12


def test_mmd_two_point_rbf():
    val = cfd.mmd2([[0.0]], [[1.0]], KernelSpec.rbf(1.0), biased=True)
    assert val == pytest.approx(2 - 2 * math.exp(-0.5), abs=1e-14)
    assert val == pytest.approx(0.78694, abs=1e-5)


def test_poly3_at_origin():
    assert cfd._gram_np(np.zeros((1, 4)), np.zeros((1, 4)), KernelSpec.poly3())[0, 0] == 1.0


def test_unbiased_needs_two_samples():
    with pytest.raises(ContractError):
        cfd.mmd2([[0.0]], [[1.0], [2.0]], KernelSpec.rbf(1.0), biased=False)


def test_kernel_spec_validation():
    with pytest.raises(ContractError):
        KernelSpec("rbf", ())
    with pytest.raises(ContractError):
        KernelSpec.rq([0.5, -1.0])
    with pytest.raises(ContractError):
        KernelSpec("laplacian", (1.0,))


KERNELS = [
    ("rbf", [1.0, 0.5]),
    ("rbf", [np.array([0.5, 2.0, 1.0])]),
    ("rq", [0.2, 0.5, 1, 2, 5]),
    ("poly3", []),
]


@pytest.mark.parametrize("family,params", KERNELS)
@pytest.mark.parametrize("biased", [True, False])
@pytest.mark.parametrize("seed", range(3))
def test_mmd_matches_brute_force_both_paths(family, params, biased, seed):
    rng = np.random.default_rng(200 + seed)
    m = 3 if family == "rbf" and np.ndim(params[0]) else int(rng.integers(1, 4))
    X = rng.normal(size=(int(rng.integers(2, 9)), m))
    Y = rng.normal(size=(int(rng.integers(2, 9)), m)) * 1.3
    kern = KernelSpec(family, tuple(params))
    expected = mmd2_brute(X, Y, family, params, biased)
    assert abs(cfd.mmd2(X, Y, kern, biased) - expected) < 1e-10
    graph = cfd.mmd2(Tensor(X, requires_grad=True), Y, kern, biased)
    assert abs(graph.item() - expected) < 1e-10


def test_mmd_blocked_path_matches_unblocked():
    rng = np.random.default_rng(12)
    X, Y = rng.normal(size=(37, 2)), rng.normal(size=(29, 2))
    kern = KernelSpec.rbf_bandwidths()
    assert cfd._mmd2_np(X, Y, kern, False, block=8) == pytest.approx(
        cfd._mmd2_np(X, Y, kern, False, block=4096), abs=1e-12)


def test_mmd_gradient_matches_finite_difference():
    rng = np.random.default_rng(13)
    X0, Y0 = rng.normal(size=(5, 2)), rng.normal(size=(4, 2))
    for kern in (KernelSpec.rbf(0.7), KernelSpec.rq(), KernelSpec.poly3()):
        X = Tensor(X0, requires_grad=True)
        dc.backward(cfd.mmd2(X, Y0, kern, biased=False))
        fd = central_diff(lambda v: cfd.mmd2(v, Y0, kern, biased=False), X0)
        np.testing.assert_allclose(X.grad, fd, atol=1e-7)


def test_kid_is_unbiased_poly3():
    rng = np.random.default_rng(14)
    X, Y = rng.normal(size=(6, 4)), rng.normal(size=(7, 4))
    assert cfd.kid(X, Y) == pytest.approx(mmd2_brute(X, Y, "poly3", [], False), abs=1e-12)


# ---------------------------------------------------------------- Monte Carlo

def test_cfd_mc_identical_is_zero():
    X = np.random.default_rng(15).normal(size=(10, 2))
    dist = WeightingDistribution.create("gaussian", 1.0, m=2)
    for reps in (1, 5):
        assert cfd.cfd_mc(X, X, dist, Rng(0), 3, reps) == 0.0


def test_cfd_mc_matches_dual_rbf_mmd():
    rng = np.random.default_rng(16)
    X, Y = rng.normal(size=(20, 2)), rng.normal(size=(20, 2)) + [0.5, 0.0]
    sigma = np.array([0.7, 1.4])
    dist = WeightingDistribution.create("gaussian", sigma)
    est, se = cfd.cfd_mc(X, Y, dist, Rng(1), 100, 1000, return_stderr=True)
    oracle = cfd.mmd2(X, Y, KernelSpec.rbf(sigma), biased=True)
    assert abs(est - oracle) <= 2 * se


@pytest.mark.parametrize("family", ["gaussian", "laplace", "student_t", "uniform"])
def test_cfd_mc_point_masses_match_closed_form(family):
    a = np.array([[0.9, -0.4]])
    dist = WeightingDistribution.create(family, [1.0, 0.6])
    est, se = cfd.cfd_mc(np.zeros((1, 2)), a, dist, Rng(2), 1000, 100, return_stderr=True)
    assert abs(est - (2 - 2 * characteristic_function(dist, a)[0])) <= 3 * se


def test_chord_bound():
    rng = np.random.default_rng(17)
    a, b = rng.uniform(-20, 20, 10_000), rng.uniform(-20, 20, 10_000)
    chord = np.hypot(np.cos(a) - np.cos(b), np.sin(a) - np.sin(b))
    assert np.all(chord <= np.abs(a - b) + 1e-12)


finite = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (5, 2), elements=finite), arrays(np.float64, (4, 2), elements=finite),
       arrays(np.float64, (3, 2), elements=finite))
def test_ecfd_symmetric_nonnegative_bounded(X, Y, T):
    xy = cfd.ecfd(X, Y, T).item()
    yx = cfd.ecfd(Y, X, T).item()
    assert xy == pytest.approx(yx, abs=1e-14)
    assert -1e-15 <= xy <= 4 + 1e-12


def test_weak_topology_decay():
    y = Rng(20).normal((10_000, 1))
    z = Rng(21).normal((10_000, 1))
    dist = WeightingDistribution.create("gaussian", 1.0, m=1)
    floor = cfd.cfd_mc(z, y, dist, Rng(22), 100, 10)
    vals = [cfd.cfd_mc(z + 1.0 / n, y, dist, Rng(22), 100, 10) for n in (1, 10, 100, 1000)]
    assert vals[-1] < 1e-3 + floor
    assert all(b <= a + floor for a, b in zip(vals, vals[1:]))


def test_ecfd_linear_mmd_quadratic_runtime():
    dist_t = np.random.default_rng(0).normal(size=(8, 4))

    def clock(fn):
        best = float("inf")
        for _ in range(3):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        return best

    rng = np.random.default_rng(1)
    small, big = rng.normal(size=(20_000, 4)), rng.normal(size=(200_000, 4))
    r_ecfd = clock(lambda: cfd.ecfd(big, big, dist_t)) / clock(lambda: cfd.ecfd(small, small, dist_t))
    assert r_ecfd <= 13
    s2, b2 = small[:1000], small[:4000]
    r_mmd = clock(lambda: cfd.mmd2(b2, b2, KernelSpec.rbf(1.0))) / clock(
        lambda: cfd.mmd2(s2, s2, KernelSpec.rbf(1.0)))
    assert r_mmd >= 8
