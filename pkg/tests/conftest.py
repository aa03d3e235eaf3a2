"""Shared fixtures and brute-force oracles."""
import math

import numpy as np
import pytest

from kerneldist import GaussianKernel, WeightedPointSet


def naive_kappa(sigma, X, wx, Y, wy):
    """Double loop over pairs; the independent reference for kappa."""
    total = 0.0
    for i in range(X.shape[0]):
        for j in range(Y.shape[0]):
            d2 = float(np.sum((X[i] - Y[j]) ** 2))
            total += wx[i] * wy[j] * math.exp(-d2 / sigma ** 2)
    return total


def dense_kappa(sigma, X, wx, Y, wy):
    """Vectorized reference for sizes where the double loop is too slow."""
    D2 = np.sum((X[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
    return float(wx @ np.exp(-D2 / sigma ** 2) @ wy)


def dense_d2(sigma, P, Q):
    f = lambda A, B: dense_kappa(sigma, A.coords, A.masses, B.coords, B.masses)
    return f(P, P) + f(Q, Q) - 2.0 * f(P, Q)


def random_set(rng, n, d=2, scale=3.0, weighted=False):
    X = rng.uniform(0.0, scale, (n, d))
    w = rng.uniform(0.5, 2.0, n) if weighted else None
    return WeightedPointSet(X, w)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def k1():
    return GaussianKernel(1.0)
