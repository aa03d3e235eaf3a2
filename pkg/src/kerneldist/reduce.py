"""Reductions to plain weighted point sets.

Oriented inputs are split into one signed component per axis, dense
inputs are snapped to a lattice, and large inputs can be replaced by an
i.i.d. sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .core import (GaussianKernel, WeightedPointSet, _as_points, _check_same_dim,
                   combine_radicand)
from .errors import InvalidParameterError
from .rng import generator

UNIT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class OrientedPointSet:
    """Weighted points carrying a unit orientation vector each.

    Args:
        coords: (n, d) locations.
        masses: (n,) positive masses (default ones).
        normals: (n, d) unit vectors; norms must be 1 within ``UNIT_TOL``.
    """

    coords: np.ndarray
    masses: np.ndarray | None
    normals: np.ndarray

    def __post_init__(self):
        base = WeightedPointSet(self.coords, self.masses)
        U = _as_points(self.normals, "normals")
        if U.shape != base.coords.shape:
            raise InvalidParameterError(
                f"normals shape {U.shape} does not match coords {base.coords.shape}")
        norms = np.linalg.norm(U, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
        if bad.size:
            raise InvalidParameterError(
                f"orientation vector {int(bad[0])} has norm {norms[bad[0]]:.12g}, expected 1")
        U.flags.writeable = False
        object.__setattr__(self, "coords", base.coords)
        object.__setattr__(self, "masses", base.masses)
        object.__setattr__(self, "normals", U)

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def total_mass(self) -> float:
        return math.fsum(self.masses.tolist())


@dataclass(frozen=True)
class OrientationDecomposition:
    """One weighted point set per axis plus the sign of each point's component.

    ``components[i]`` holds the points with nonzero i-th orientation
    coordinate, with mass mu(p) |U_i(p)|; ``signs[i]`` holds sign(U_i(p)).
    """

    components: tuple
    signs: tuple

    @property
    def dim(self) -> int:
        return len(self.components)

    def signed_masses(self, i: int) -> np.ndarray:
        return self.components[i].masses * self.signs[i]


def split_orientation(P: OrientedPointSet) -> OrientationDecomposition:
    """Split an oriented set into d signed weighted components."""
    comps, signs = [], []
    for i in range(P.dim):
        u = P.normals[:, i]
        keep = u != 0.0
        comps.append(WeightedPointSet(P.coords[keep], P.masses[keep] * np.abs(u[keep]),
                                      dim=P.dim))
        signs.append(np.sign(u[keep]))
    return OrientationDecomposition(tuple(comps), tuple(signs))


def kappa_signed(k: GaussianKernel, A: WeightedPointSet, sa, B: WeightedPointSet, sb) -> float:
    """Cross sum with each term multiplied by sa(p) sb(q)."""
    _check_same_dim(A.dim, B.dim)
    if A.n == 0 or B.n == 0:
        return 0.0
    return _backend.cross_sum(A.coords, A.masses * sa, B.coords, B.masses * sb, k.inv_s2)


def kappa_oriented(k: GaussianKernel, P, Q) -> float:
    """Oriented cross sum sum_p sum_q K(p,q) <U(p), V(q)> mu(p) nu(q).

    Args:
        k: kernel.
        P, Q: OrientedPointSet or OrientationDecomposition.
    """
    dp = P if isinstance(P, OrientationDecomposition) else split_orientation(P)
    dq = Q if isinstance(Q, OrientationDecomposition) else split_orientation(Q)
    if dp.dim != dq.dim:
        raise InvalidParameterError(f"dimension mismatch: {dp.dim} vs {dq.dim}")
    return math.fsum(
        kappa_signed(k, dp.components[i], dp.signs[i], dq.components[i], dq.signs[i])
        for i in range(dp.dim))


def kernel_distance_sq_oriented(k: GaussianKernel, P: OrientedPointSet,
                                Q: OrientedPointSet) -> float:
    """D_K^2 between oriented sets (clamped within tolerance)."""
    dp, dq = split_orientation(P), split_orientation(Q)
    W = max(P.total_mass, Q.total_mass)
    return combine_radicand(kappa_oriented(k, dp, dp), kappa_oriented(k, dq, dq),
                            kappa_oriented(k, dp, dq), W)


def lattice_spacing(k: GaussianKernel, eps: float, d: int) -> float:
    """Spacing eps sigma / sqrt(d) of the compression lattice."""
    return eps * k.sigma / math.sqrt(d)


def _group_sum(keys: np.ndarray, masses: np.ndarray):
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    order = np.argsort(inv, kind="stable")
    bounds = np.flatnonzero(np.diff(inv[order])) + 1
    groups = np.split(masses[order], bounds)
    return uniq, np.array([math.fsum(g.tolist()) for g in groups])


def grid_compress(k: GaussianKernel, P: WeightedPointSet, eps: float) -> WeightedPointSet:
    """Move each point to its nearest lattice point and merge masses.

    Args:
        k: kernel supplying sigma.
        P: input set.
        eps: relative spacing; the lattice is (eps sigma / sqrt(d)) Z^d.

    Returns:
        A set on the lattice, sorted lexicographically by lattice index.
        Points equidistant from several lattice points go to the
        lexicographically smallest one.
    """
    eps = float(eps)
    if not (eps > 0.0 and math.isfinite(eps)):
        raise InvalidParameterError(f"eps must be positive, got {eps!r}")
    if P.n == 0:
        return P
    h = lattice_spacing(k, eps, P.dim)
    # round half down in every coordinate
    z = np.ceil(P.coords / h - 0.5)
    cells, masses = _group_sum(z, P.masses)
    return WeightedPointSet(cells * h, masses)


def draw_indices(masses: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k i.i.d. indices drawn with probability proportional to mass."""
    cdf = np.cumsum(masses)
    cdf /= cdf[-1]
    u = rng.random(k)
    return np.minimum(np.searchsorted(cdf, u, side="right"), masses.shape[0] - 1)


def sample_discretize(P: WeightedPointSet, k: int, seed: int) -> WeightedPointSet:
    """Replace P by k i.i.d. mass-proportional draws of mass W/k each.

    Args:
        P: nonempty input set.
        k: sample size, at least 1.
        seed: master seed (stream ``discretize``).

    Returns:
        The sample as a multiset in draw order.
    """
    k = int(k)
    if k < 1:
        raise InvalidParameterError(f"sample size must be >= 1, got {k}")
    if P.n == 0:
        raise InvalidParameterError("cannot sample from an empty point set")
    idx = draw_indices(P.masses, k, generator(seed, "discretize"))
    return WeightedPointSet(P.coords[idx], np.full(k, P.total_mass / k))
