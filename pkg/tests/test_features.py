import math

import numpy as np
import pytest

from kerneldist import (GaussianKernel, WeightedPointSet, draw_frequencies, embed,
                        ifgt_choose_tau, ifgt_embed, ifgt_error_bound, kappa_exact,
                        kernel_distance_features, kernel_distance_sq_exact, kernel_eval,
                        make_taylor_basis, multiindex_enumerate, nn_query, rff_dimension,
                        rff_dimension_domain, rff_embed)
from kerneldist.errors import BasisMismatchError, BudgetExceededError, InvalidParameterError
from kerneldist.features import (feature_inner, ifgt_point_features, rff_point_features,
                                 taylor_basis_for, taylor_center, taylor_delta)

from conftest import dense_kappa, random_set


def ball(rng, n, d, radius):
    g = rng.normal(size=(n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * radius * rng.random((n, 1)) ** (1.0 / d)


class TestRffDimension:
    def test_example(self):
        rho = rff_dimension(0.5, 0.1, 100)
        assert rho == 2 * math.ceil(128 * math.log(200_000))
        assert rho == 3126

    def test_minimal_even(self):
        for eps, delta, n in [(0.5, 0.1, 100), (0.2, 0.05, 1000), (0.9, 0.5, 3)]:
            rho = rff_dimension(eps, delta, n)
            assert rho % 2 == 0 and rho >= 2
            assert 2 * n * n * math.exp(-rho * eps ** 2 / 64) <= delta
            # two fewer features break the inequality
            assert 2 * n * n * math.exp(-(rho - 2) * eps ** 2 / 64) > delta

    def test_doubling_n(self):
        eps = 0.3
        a, b = rff_dimension(eps, 0.1, 500), rff_dimension(eps, 0.1, 1000)
        assert abs((b - a) - (64 / eps ** 2) * math.log(4)) <= 2

    def test_lower_floor(self):
        assert rff_dimension(0.999, 0.999, 1) >= 2

    @pytest.mark.parametrize("args", [(0.0, 0.1, 5), (1.2, 0.1, 5), (0.1, 0.0, 5), (0.1, 1.0, 5),
                                      (0.1, 0.1, 0)])
    def test_ranges(self, args):
        with pytest.raises(InvalidParameterError):
            rff_dimension(*args)


class TestRffDimensionDomain:
    def test_example(self):
        assert rff_dimension_domain(0.5, 0.1, 10, 2) == 2 * math.ceil(256 * math.log(400)) == 3068

    def test_monotone(self):
        assert rff_dimension_domain(0.3, 0.1, 5, 2) < rff_dimension_domain(0.3, 0.1, 50, 2)
        assert rff_dimension_domain(0.3, 0.1, 5, 2) < rff_dimension_domain(0.3, 0.1, 5, 3)

    def test_rejects(self):
        with pytest.raises(InvalidParameterError):
            rff_dimension_domain(0.3, 0.1, 0.0, 2)


class TestFourierBasis:
    def test_seed_determinism(self):
        a, b = draw_frequencies(1.3, 3, 200, 42), draw_frequencies(1.3, 3, 200, 42)
        assert a.frequencies.tobytes() == b.frequencies.tobytes()
        assert a == b
        assert draw_frequencies(1.3, 3, 200, 43).frequencies.tobytes() != a.frequencies.tobytes()

    def test_shape(self):
        b = draw_frequencies(1.0, 2, 10, 0)
        assert b.frequencies.shape == (5, 2)

    @pytest.mark.parametrize("rho", [0, 1, 3, -2])
    def test_bad_rho(self, rho):
        with pytest.raises(InvalidParameterError):
            draw_frequencies(1.0, 2, rho, 0)

    def test_rho_cap(self):
        with pytest.raises(BudgetExceededError):
            draw_frequencies(1.0, 2, 20_000_002, 0)

    def test_covariance(self):
        sigma = 1.7
        w = draw_frequencies(sigma, 2, 200_000, 5).frequencies
        var = w.var(axis=0)
        assert np.all(np.abs(var / (2 / sigma ** 2) - 1) < 0.05)
        assert abs(np.cov(w.T)[0, 1]) < 0.05 * 2 / sigma ** 2

    def test_cos_mean(self):
        sigma = 1.0
        w = draw_frequencies(sigma, 2, 200_000, 11).frequencies
        z = np.array([0.6, 0.8]) * sigma
        m = np.cos(w @ z).mean()
        assert abs(m - math.exp(-1)) <= 3 / math.sqrt(100_000)


class TestRffEmbed:
    def test_self_inner_is_mass_squared(self, rng):
        b = draw_frequencies(1.0, 2, 64, 0)
        for _ in range(10):
            p = rng.normal(size=(1, 2))
            mu = float(rng.uniform(0.5, 3))
            f = rff_point_features(b, p, [mu])[0]
            assert f @ f == pytest.approx(mu * mu, rel=1e-13)

    def test_coordinates(self):
        b = draw_frequencies(1.0, 2, 6, 3)
        p = np.array([0.3, -1.2])
        f = rff_embed(b, WeightedPointSet([p], [2.0])).values
        s = math.sqrt(2 / 6)
        for i in range(3):
            ang = b.frequencies[i] @ p
            assert f[2 * i] == pytest.approx(2.0 * s * math.cos(ang), rel=1e-14)
            assert f[2 * i + 1] == pytest.approx(2.0 * s * math.sin(ang), rel=1e-14, abs=1e-15)

    def test_unbiased(self, k1):
        p, q = np.array([0.0, 0.0]), np.array([0.7, 0.4])
        vals = []
        for seed in range(200):
            b = draw_frequencies(1.0, 2, 100, seed)
            f = rff_point_features(b, np.stack([p, q]), [2.0, 3.0])
            vals.append(f[0] @ f[1] / 6.0)
        vals = np.array(vals)
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - kernel_eval(k1, p, q)) <= 3 * se

    def test_same_set_zero(self, rng):
        P = random_set(rng, 30)
        b = draw_frequencies(1.0, 2, 500, 1)
        assert kernel_distance_features(rff_embed(b, P), rff_embed(b, P)) == 0.0

    def test_linearity(self, rng):
        A, B = random_set(rng, 40, weighted=True), random_set(rng, 30, weighted=True)
        for b in (draw_frequencies(1.0, 2, 300, 2), make_taylor_basis(1.0, [1.5, 1.5], 8)):
            lhs = embed(b, A.union(B)).values
            rhs = (embed(b, A) + embed(b, B)).values
            assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(lhs).max())

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidParameterError):
            rff_embed(draw_frequencies(1.0, 3, 10, 0), WeightedPointSet([[0.0, 0.0]]))

    def test_distance_monte_carlo(self, rng):
        eps, delta, n = 0.2, 0.1, 100
        k = GaussianKernel(1.0)
        P, Q = random_set(rng, n, scale=2.0), random_set(rng, n, scale=2.0)
        exact = kernel_distance_sq_exact(k, P, Q)
        rho = rff_dimension(eps, delta, n)
        ok = 0
        for seed in range(100):
            b = draw_frequencies(1.0, 2, rho, seed)
            ok += abs(kernel_distance_features(rff_embed(b, P), rff_embed(b, Q)) - exact) <= (
                eps * n * n)
        assert ok >= 90


class TestMultiindex:
    def test_examples(self):
        assert multiindex_enumerate(2, 3) == [(0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0)]
        assert multiindex_enumerate(1, 4) == [(0,), (1,), (2,), (3,)]
        assert multiindex_enumerate(3, 2) == [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0)]

    @pytest.mark.parametrize("d,tau", [(1, 1), (2, 7), (3, 5), (4, 4)])
    def test_count_and_order(self, d, tau):
        idx = multiindex_enumerate(d, tau)
        assert len(idx) == math.comb(tau + d - 1, d)
        keys = [(sum(a), a) for a in idx]
        assert keys == sorted(keys)
        assert len(set(idx)) == len(idx)
        assert all(sum(a) <= tau - 1 for a in idx)


class TestIfgtTau:
    def test_examples(self):
        assert ifgt_choose_tau(0.1, 0.1) == 1
        assert 2 ** 13 / math.factorial(13) > 1e-6
        assert ifgt_choose_tau(1e-6, 1.0) == 14

    def test_minimal(self):
        for eps, Delta in [(1e-3, 2.0), (0.01, 0.5), (0.5, 3.0)]:
            tau = ifgt_choose_tau(eps, Delta)
            assert ifgt_error_bound(tau, Delta) <= eps
            if tau > 1:
                assert ifgt_error_bound(tau - 1, Delta) > eps

    def test_monotone(self):
        taus = [ifgt_choose_tau(e, 1.5) for e in (0.5, 0.1, 1e-2, 1e-4)]
        assert taus == sorted(taus)
        taus = [ifgt_choose_tau(1e-3, D) for D in (0.2, 0.8, 1.5, 2.5)]
        assert taus == sorted(taus)

    def test_ranges(self):
        with pytest.raises(InvalidParameterError):
            ifgt_choose_tau(0.0, 1.0)
        with pytest.raises(InvalidParameterError):
            ifgt_choose_tau(0.1, 0.0)


class TestIfgtEmbed:
    def test_point_at_center(self):
        b = make_taylor_basis(1.0, [0.5, -0.5], 4)
        f = ifgt_embed(b, WeightedPointSet([[0.5, -0.5]])).values
        assert f[0] == 1.0 and np.all(f[1:] == 0.0)
        assert f @ f == 1.0

    def test_pair_example(self, k1):
        p, q = np.array([0.0, 0.0]), np.array([0.2, 0.0])
        c = (p + q) / 2
        Delta = taylor_delta(k1, c, WeightedPointSet(np.stack([p, q])))
        tau = ifgt_choose_tau(1e-3, Delta)
        b = make_taylor_basis(1.0, c, tau)
        f = ifgt_point_features(b, np.stack([p, q]))
        assert abs(f[0] @ f[1] - kernel_eval(k1, p, q)) <= 1e-3

    def test_ball_example(self, rng, k1):
        X, Y = ball(rng, 100, 2, 1.0), ball(rng, 100, 2, 1.0)
        P, Q = WeightedPointSet(X), WeightedPointSet(Y)
        b = make_taylor_basis(1.0, np.zeros(2), ifgt_choose_tau(1e-3, 2.0))
        val = feature_inner(ifgt_embed(b, P), ifgt_embed(b, Q))
        assert abs(val - kappa_exact(k1, P, Q)) <= 1e-3 * 100 ** 2

    def test_deterministic_bound(self, rng):
        for _ in range(20):
            sigma = float(rng.uniform(0.5, 2))
            k = GaussianKernel(sigma)
            P = WeightedPointSet(ball(rng, 50, 2, 0.9 * sigma), rng.uniform(0.5, 2, 50))
            Q = WeightedPointSet(ball(rng, 40, 2, 0.9 * sigma), rng.uniform(0.5, 2, 40))
            c = taylor_center(P, Q)
            Delta = taylor_delta(k, c, P, Q)
            for tau in (2, 4, 8):
                b = make_taylor_basis(sigma, c, tau)
                err = abs(feature_inner(ifgt_embed(b, P), ifgt_embed(b, Q)) - kappa_exact(k, P, Q))
                assert err <= P.total_mass * Q.total_mass * ifgt_error_bound(tau, Delta)

    def test_distance_three_eps(self, rng, k1):
        eps = 1e-3
        for _ in range(10):
            P = WeightedPointSet(ball(rng, 60, 2, 0.8))
            Q = WeightedPointSet(ball(rng, 60, 2, 0.8) + 0.1)
            b = taylor_basis_for(k1, P, Q, eps)
            U = kernel_distance_features(ifgt_embed(b, P), ifgt_embed(b, Q))
            assert abs(U - kernel_distance_sq_exact(k1, P, Q)) <= 3 * eps * 60 ** 2

    def test_far_points_finite_or_error(self):
        b = make_taylor_basis(1.0, [0.0], 40)
        f = ifgt_embed(b, WeightedPointSet([[30.0]])).values
        assert np.all(np.isfinite(f))

    def test_rho_formula(self):
        b = make_taylor_basis(1.0, [0, 0, 0], 5)
        assert b.rho == math.comb(7, 3)


class TestFeatureDistance:
    def test_basis_mismatch(self, rng):
        P = random_set(rng, 5)
        a = rff_embed(draw_frequencies(1.0, 2, 10, 0), P)
        b = rff_embed(draw_frequencies(1.0, 2, 10, 1), P)
        with pytest.raises(BasisMismatchError):
            kernel_distance_features(a, b)
        c = ifgt_embed(make_taylor_basis(1.0, [0, 0], 3), P)
        with pytest.raises(BasisMismatchError):
            kernel_distance_features(a, c)

    def test_nonnegative(self, rng):
        P = random_set(rng, 10)
        b = draw_frequencies(1.0, 2, 50, 0)
        assert kernel_distance_features(rff_embed(b, P), rff_embed(b, P)) == 0.0


class TestNearestNeighbour:
    def test_self_query(self, rng):
        b = draw_frequencies(1.0, 2, 400, 0)
        corpus = [rff_embed(b, random_set(rng, 20)) for _ in range(5)]
        assert nn_query(corpus, corpus[3]) == 3
        assert nn_query(corpus[:1], corpus[3]) == 0

    def test_ties_lowest_index(self, rng):
        b = draw_frequencies(1.0, 2, 40, 0)
        v = rff_embed(b, random_set(rng, 5))
        assert nn_query([v, v, v], v) == 0

    def test_clusters_match_exact(self, rng, k1):
        centers = np.array([[0, 0], [10, 0], [0, 10], [10, 10]], dtype=float)
        sets = [WeightedPointSet(c + rng.normal(scale=0.3, size=(15, 2))) for c in centers]
        b = draw_frequencies(1.0, 2, 4000, 9)
        corpus = [rff_embed(b, S) for S in sets]
        for j, c in enumerate(centers):
            q = WeightedPointSet(c + rng.normal(scale=0.3, size=(15, 2)))
            exact = int(np.argmin([kernel_distance_sq_exact(k1, S, q) for S in sets]))
            assert nn_query(corpus, rff_embed(b, q)) == exact == j

    def test_empty(self, rng):
        b = draw_frequencies(1.0, 2, 10, 0)
        with pytest.raises(InvalidParameterError):
            nn_query([], rff_embed(b, random_set(rng, 3)))
