import math

import numpy as np
import pytest

from kerneldist import (GaussianKernel, TrivialKernel, WeightedPoint, WeightedPointSet,
                        kappa_exact, kernel_distance_exact, kernel_distance_sq_exact, kernel_eval,
                        lipschitz_bound, tail_radius)
from kerneldist.core import combine_radicand
from kerneldist.errors import (DimensionMismatchError, InvalidParameterError,
                               NumericalInstabilityError)

from conftest import dense_kappa, naive_kappa, random_set


class TestGaussianKernel:
    def test_rejects_bad_sigma(self):
        for s in (0.0, -1.0, math.inf, math.nan):
            with pytest.raises(InvalidParameterError):
                GaussianKernel(s)

    def test_eval_examples(self, k1):
        assert kernel_eval(k1, (0, 0), (0, 0)) == 1.0
        assert kernel_eval(k1, (0, 0), (math.sqrt(math.log(2)), 0)) == pytest.approx(0.5, abs=1e-15)
        assert kernel_eval(GaussianKernel(2.0), (0, 0, 0), (2, 0, 0)) == pytest.approx(
            math.exp(-1.0), rel=1e-15)

    def test_eval_symmetric_and_bounded(self, rng, k1):
        for _ in range(100):
            p, q = rng.normal(size=3) * 3, rng.normal(size=3) * 3
            v = kernel_eval(k1, p, q)
            assert v == kernel_eval(k1, q, p)
            assert 0.0 < v <= 1.0 or (v == 0.0 and np.sum((p - q) ** 2) > 700)

    def test_eval_dimension_mismatch(self, k1):
        with pytest.raises(DimensionMismatchError):
            kernel_eval(k1, (0, 0), (0, 0, 0))

    def test_trivial_kernel(self):
        t = TrivialKernel()
        assert kernel_eval(t, (1.0, 2.0), (1.0, 2.0)) == 1.0
        assert kernel_eval(t, (1.0, 2.0), (1.0, 2.0 + 1e-15)) == 0.0


class TestTailRadius:
    def test_examples(self, k1):
        assert tail_radius(k1, 1.0 / math.e) == pytest.approx(1.0, rel=1e-15)
        assert tail_radius(k1, 0.5) == pytest.approx(math.sqrt(math.log(2)), rel=1e-15)

    def test_sigma3_gamma001(self):
        k = GaussianKernel(3.0)
        r = tail_radius(k, 0.01)
        assert r == pytest.approx(3.0 * math.sqrt(math.log(100.0)), rel=1e-15)
        assert r == pytest.approx(6.43790, abs=1e-5)
        # the kernel equals gamma at the radius and drops below it beyond
        assert kernel_eval(k, (0.0,), (r,)) == pytest.approx(0.01, rel=1e-12)
        assert kernel_eval(k, (0.0,), (r * (1 + 1e-9),)) < 0.01

    def test_tail_property(self, rng, k1):
        gamma = 0.05
        r = tail_radius(k1, gamma)
        for _ in range(1000):
            p = rng.normal(size=2)
            u = rng.normal(size=2)
            q = p + u / np.linalg.norm(u) * r * (1.0 + rng.uniform(1e-6, 2.0))
            assert kernel_eval(k1, p, q) < gamma

    @pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1, 2.0])
    def test_rejects_gamma(self, k1, gamma):
        with pytest.raises(InvalidParameterError):
            tail_radius(k1, gamma)


class TestLipschitz:
    def test_examples(self):
        assert lipschitz_bound(GaussianKernel(1.0)) == pytest.approx(0.857763, abs=1e-6)
        assert lipschitz_bound(GaussianKernel(2.0)) == pytest.approx(0.428882, abs=1e-6)

    def test_property(self):
        rng = np.random.default_rng(7)
        k = GaussianKernel(1.0)
        L = lipschitz_bound(k)
        p = rng.normal(size=(100_000, 2)) * 2
        q = rng.normal(size=(100_000, 2)) * 2
        u = rng.normal(size=(100_000, 2))
        delta = 0.01 * u / np.linalg.norm(u, axis=1, keepdims=True)
        a = np.exp(-np.sum((p - q) ** 2, axis=1))
        b = np.exp(-np.sum((p - q - delta) ** 2, axis=1))
        assert np.max(np.abs(a - b)) <= L * 0.01 + 1e-15
        assert L * 0.01 <= 0.01


class TestWeightedPointSet:
    def test_fields(self):
        P = WeightedPointSet([[0, 0], [3, 4]], [1.0, 2.5])
        assert P.n == 2 and P.dim == 2
        assert P.total_mass == 3.5
        assert P.diameter == pytest.approx(5.0)
        assert P.normalized_diameter(GaussianKernel(2.0)) == pytest.approx(2.5)

    def test_default_masses(self):
        P = WeightedPointSet(np.zeros((4, 3)))
        assert np.all(P.masses == 1.0) and P.total_mass == 4.0

    @pytest.mark.parametrize("w", [[0.0, 1.0], [-1.0, 1.0], [math.nan, 1.0], [1.0]])
    def test_rejects_masses(self, w):
        with pytest.raises(InvalidParameterError):
            WeightedPointSet([[0.0], [1.0]], w)

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidParameterError):
            WeightedPointSet([[0.0, math.inf]])

    def test_from_points(self):
        P = WeightedPointSet.from_points([WeightedPoint((0.0, 1.0), 2.0),
                                          WeightedPoint((1.0, 1.0), 1.0)])
        assert P.total_mass == 3.0 and P.points[0].mass == 2.0
        with pytest.raises(DimensionMismatchError):
            WeightedPointSet.from_points([WeightedPoint((0.0,), 1.0), WeightedPoint((0.0, 1.0), 1.0)])

    def test_point_mass_positive(self):
        with pytest.raises(InvalidParameterError):
            WeightedPoint((0.0,), 0.0)

    def test_total_mass_consistent(self, rng):
        w = rng.uniform(1e-3, 1e3, 10_000)
        P = WeightedPointSet(rng.normal(size=(10_000, 2)), w)
        assert P.total_mass == pytest.approx(math.fsum(w), rel=1e-12)

    def test_diameter_large_set(self, rng):
        X = rng.normal(size=(3000, 2))
        P = WeightedPointSet(X)
        D2 = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1)
        assert P.diameter == pytest.approx(math.sqrt(D2.max()), rel=1e-12)


class TestKappa:
    def test_examples(self, k1):
        P = WeightedPointSet([[0.0, 0.0]])
        assert kappa_exact(k1, P, P) == 1.0
        A = WeightedPointSet([[0.0, 0.0]], [2.0])
        B = WeightedPointSet([[math.sqrt(math.log(2)), 0.0]], [3.0])
        assert kappa_exact(k1, A, B) == pytest.approx(3.0, rel=1e-14)

    def test_matches_double_loop(self, rng):
        for sigma in (0.5, 1.0, 2.0):
            k = GaussianKernel(sigma)
            P = random_set(rng, 50, weighted=True)
            Q = random_set(rng, 50, weighted=True)
            ref = naive_kappa(sigma, P.coords, P.masses, Q.coords, Q.masses)
            assert kappa_exact(k, P, Q) == pytest.approx(ref, rel=1e-12)

    def test_self_bounded_by_mass(self, rng, k1):
        P = random_set(rng, 80, weighted=True)
        assert kappa_exact(k1, P, P) <= P.total_mass ** 2

    def test_dimension_mismatch(self, k1):
        with pytest.raises(DimensionMismatchError):
            kappa_exact(k1, WeightedPointSet([[0.0]]), WeightedPointSet([[0.0, 0.0]]))


class TestKernelDistance:
    def test_identical(self, rng, k1):
        P = random_set(rng, 40, weighted=True)
        assert kernel_distance_exact(k1, P, P) == 0.0

    def test_singletons(self, k1):
        P = WeightedPointSet([[0.0, 0.0]])
        Q = WeightedPointSet([[math.sqrt(math.log(2)), 0.0]])
        assert kernel_distance_sq_exact(k1, P, Q) == pytest.approx(1.0, rel=1e-14)

    def test_trivial_kernel_symmetric_difference(self):
        t = TrivialKernel()
        P = WeightedPointSet([[0.0, 0.0], [1.0, 0.0]])
        Q = WeightedPointSet([[1.0, 0.0], [2.0, 0.0]])
        assert kernel_distance_sq_exact(t, P, Q) == 2.0

    def test_symmetry(self, rng, k1):
        for _ in range(20):
            P, Q = random_set(rng, 30, weighted=True), random_set(rng, 25, weighted=True)
            assert kernel_distance_exact(k1, P, Q) == kernel_distance_exact(k1, Q, P)

    def test_triangle(self, rng, k1):
        for _ in range(50):
            P, Q, R = (random_set(rng, 20, weighted=True) for _ in range(3))
            W2 = max(P.total_mass, Q.total_mass, R.total_mass) ** 2
            lhs = kernel_distance_exact(k1, P, R)
            rhs = kernel_distance_exact(k1, P, Q) + kernel_distance_exact(k1, Q, R)
            assert lhs <= rhs + 1e-9 * W2

    def test_matches_reference(self, rng):
        k = GaussianKernel(0.7)
        P, Q = random_set(rng, 60, weighted=True), random_set(rng, 70, weighted=True)
        f = lambda A, B: dense_kappa(0.7, A.coords, A.masses, B.coords, B.masses)
        ref = f(P, P) + f(Q, Q) - 2 * f(P, Q)
        assert kernel_distance_sq_exact(k, P, Q) == pytest.approx(ref, rel=1e-10, abs=1e-10)


class TestRadicand:
    def test_small_negative_clamped(self):
        assert combine_radicand(1.0, 1.0, 1.0 + 1e-12, 1.0) == 0.0

    def test_large_negative_raises(self):
        with pytest.raises(NumericalInstabilityError):
            combine_radicand(1.0, 1.0, 1.1, 1.0)
