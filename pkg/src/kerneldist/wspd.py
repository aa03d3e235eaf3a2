"""Well-separated pair decomposition and the near-linear kernel sum.

The split tree is built over the distinct locations of the input; each
location carries the total mass of the points that sit on it, once for
the first set and once for the second. A pair (A, B) is accepted when
the larger bounding-box diagonal is at most ``alpha`` times the distance
between the boxes, which bounds both diameters against the closest pair.

Error budget: inside an accepted pair every point pair is at least
``r = boxdist`` apart and its distance is within ``2 alpha r`` of the
representative distance. With f(r) = exp(-r^2/sigma^2) we have
r |f'(r)| <= 2/e, so each unit of cross mass is off by at most
``4 alpha / e``; ``alpha <= e eps / 16`` keeps that at ``eps/4``. Pairs
whose boxes are farther apart than ``sigma sqrt(ln(4/eps))`` have every
kernel value below ``eps/4`` and are dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _backend
from .constants import WSPD_MAX_DIM
from .core import GaussianKernel, WeightedPointSet, _check_same_dim, _canonical_order
from .errors import InvalidParameterError, UnsupportedDimensionError


def wspd_alpha(eps: float) -> float:
    """Separation ratio meeting an eps/4 relative budget per kernel sum."""
    _check_eps(eps)
    return min(0.25 * eps / math.sqrt(math.log(4.0 / eps)), math.e * eps / 16.0)


def prune_radius(k: GaussianKernel, eps: float) -> float:
    """Box distance beyond which every kernel value is below eps/4."""
    _check_eps(eps)
    return k.sigma * math.sqrt(math.log(4.0 / eps))


def _check_eps(eps) -> float:
    eps = float(eps)
    if not (0.0 < eps < 1.0):
        raise InvalidParameterError(f"eps must lie in (0, 1), got {eps!r}")
    return eps


@dataclass(frozen=True, eq=False)
class SplitTree:
    """Binary midpoint split tree over distinct locations.

    Attributes:
        locations: (m, d) distinct coordinates.
        first_index: lowest input index landing on each location.
        inverse: input index -> location index.
        perm: location order such that node u owns perm[start[u]:end[u]].
        left, right: child node ids, -1 at leaves. Node 0 is the root and
            ids follow preorder.
        lo, hi: tight bounding boxes.
        rep: representative location of each node (lowest input index).
    """

    locations: np.ndarray
    first_index: np.ndarray
    inverse: np.ndarray
    perm: np.ndarray
    start: np.ndarray
    end: np.ndarray
    left: np.ndarray
    right: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    rep: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.start.shape[0]

    @property
    def n_locations(self) -> int:
        return self.locations.shape[0]

    def sizes(self) -> np.ndarray:
        return self.end - self.start

    def node_locations(self, u: int) -> np.ndarray:
        return self.perm[self.start[u]:self.end[u]]

    def is_leaf(self, u: int) -> bool:
        return self.left[u] < 0

    def node_sums(self, values: np.ndarray) -> np.ndarray:
        """Sum a per-location quantity over every node."""
        ordered = np.append(values[self.perm], 0.0)
        idx = np.empty(2 * self.n_nodes, dtype=np.intp)
        idx[0::2] = self.start
        idx[1::2] = self.end
        return np.add.reduceat(ordered, idx)[0::2]


def build_split_tree(coords: np.ndarray) -> SplitTree:
    """Deduplicate ``coords`` and build the split tree over the locations."""
    X = np.ascontiguousarray(coords, dtype=np.float64) + 0.0
    n = X.shape[0]
    if n == 0:
        raise InvalidParameterError("cannot build a split tree over no points")
    locs, first, inv = np.unique(X, axis=0, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    # np.unique sorts rows; relabel locations by first appearance
    order = np.argsort(first, kind="stable")
    relabel = np.empty_like(order)
    relabel[order] = np.arange(order.shape[0])
    locs, first, inv = locs[order], first[order], relabel[inv]
    perm, start, end, left, right, lo, hi = _backend.build_tree(locs)
    ordered = np.append(perm, 0)
    idx = np.empty(2 * start.shape[0], dtype=np.intp)
    idx[0::2] = start
    idx[1::2] = end
    # locations are numbered by first appearance, so min id = lowest input index
    rep = np.minimum.reduceat(ordered, idx)[0::2]
    return SplitTree(locs, first, inv, perm, start, end, left, right, lo, hi, rep)


@dataclass(frozen=True)
class WspdPair:
    """One separated pair of tree nodes with its masses.

    ``mass_ap`` is the first-set mass inside node A, and so on.
    """

    a: int
    b: int
    rep_a: np.ndarray
    rep_b: np.ndarray
    distance: float
    size_a: int
    size_b: int
    mass_ap: float
    mass_aq: float
    mass_bp: float
    mass_bq: float

    @property
    def cross_mass(self) -> float:
        return self.mass_ap * self.mass_bq + self.mass_aq * self.mass_bp


@dataclass(frozen=True, eq=False)
class WspdDecomposition:
    """Split tree plus the alpha-separated node pairs.

    ``pair_a``/``pair_b`` are node ids. ``mass_p``/``mass_q`` are per-node
    masses of the two input sets (``mass_q`` is zero for a single set).
    """

    tree: SplitTree
    alpha: float
    prune: float
    pair_a: np.ndarray
    pair_b: np.ndarray
    n_pruned: int
    mass_p: np.ndarray
    mass_q: np.ndarray
    loc_mass_p: np.ndarray
    loc_mass_q: np.ndarray

    def __len__(self) -> int:
        return self.pair_a.shape[0]

    @cached_property
    def distances(self) -> np.ndarray:
        L = self.tree.locations
        ra = L[self.tree.rep[self.pair_a]]
        rb = L[self.tree.rep[self.pair_b]]
        return np.sqrt(((ra - rb) ** 2).sum(axis=1))

    def coverage(self) -> int:
        """Number of unordered location pairs covered by the pair list."""
        s = self.tree.sizes()
        return int(np.sum(s[self.pair_a] * s[self.pair_b]))

    @property
    def pairs(self) -> list[WspdPair]:
        t = self.tree
        s = t.sizes()
        D = self.distances
        out = []
        for i, (a, b) in enumerate(zip(self.pair_a.tolist(), self.pair_b.tolist())):
            out.append(WspdPair(a, b, t.locations[t.rep[a]], t.locations[t.rep[b]], float(D[i]),
                                int(s[a]), int(s[b]), float(self.mass_p[a]), float(self.mass_q[a]),
                                float(self.mass_p[b]), float(self.mass_q[b])))
        return out


def _decompose(coords: np.ndarray, mass_p: np.ndarray, mass_q: np.ndarray, alpha: float,
               prune: float | None) -> WspdDecomposition:
    tree = build_split_tree(coords)
    m = tree.n_locations
    lp = np.bincount(tree.inverse, weights=mass_p, minlength=m)
    lq = np.bincount(tree.inverse, weights=mass_q, minlength=m)
    a, b, n_pruned = _backend.wspd_pairs(tree.lo, tree.hi, tree.left, tree.right, alpha,
                                         -1.0 if prune is None else prune)
    return WspdDecomposition(tree, alpha, -1.0 if prune is None else prune, a, b, int(n_pruned),
                             tree.node_sums(lp), tree.node_sums(lq), lp, lq)


def build_wspd(points: WeightedPointSet, alpha: float,
               prune: float | None = None) -> WspdDecomposition:
    """Build an alpha-WSPD of a point set.

    Args:
        points: input set; repeated locations are merged.
        alpha: separation ratio in (0, 1/2).
        prune: optional box distance beyond which pairs are dropped.

    Returns:
        The decomposition; ``.tree`` is the split tree and ``.pairs`` the
        pair list. Fewer than two distinct locations give no pairs.
    """
    alpha = float(alpha)
    if not (0.0 < alpha < 0.5):
        raise InvalidParameterError(f"alpha must lie in (0, 1/2), got {alpha!r}")
    if points.dim > WSPD_MAX_DIM:
        raise UnsupportedDimensionError(f"WSPD supports d <= {WSPD_MAX_DIM}, got {points.dim}")
    return _decompose(points.coords, points.masses, np.zeros(points.n), alpha, prune)


@dataclass(frozen=True)
class WspdEstimate:
    """Result of the WSPD estimator with its bookkeeping."""

    d2: float
    kappa_pp: float
    kappa_qq: float
    kappa_pq: float
    n_pairs: int
    n_pruned: int
    alpha: float
    prune_radius: float
    eps: float
    extra: dict = field(default_factory=dict)


def _joint_sums(k: GaussianKernel, P: WeightedPointSet, Q: WeightedPointSet, eps: float):
    """Split tree over P u Q and the pair sums, streamed without a pair list."""
    eps = _check_eps(eps)
    _check_same_dim(P.dim, Q.dim)
    if P.dim > WSPD_MAX_DIM:
        raise UnsupportedDimensionError(f"WSPD supports d <= {WSPD_MAX_DIM}, got {P.dim}")
    tree = build_split_tree(np.vstack([P.coords, Q.coords]))
    m = tree.n_locations
    lp = np.bincount(tree.inverse[:P.n], weights=P.masses, minlength=m)
    lq = np.bincount(tree.inverse[P.n:], weights=Q.masses, minlength=m)
    alpha, prune = wspd_alpha(eps), prune_radius(k, eps)
    sums = _backend.wspd_sums(tree.lo, tree.hi, tree.left, tree.right, alpha, prune,
                              tree.locations[tree.rep], tree.node_sums(lp), tree.node_sums(lq),
                              k.inv_s2)
    return lp, lq, alpha, prune, sums


def wspd_estimate(k: GaussianKernel, P: WeightedPointSet, Q: WeightedPointSet,
                  eps: float) -> WspdEstimate:
    """All three kernel sums and D_K^2 from one decomposition of P u Q."""
    if not _canonical_order(P, Q):
        est = wspd_estimate(k, Q, P, eps)
        return WspdEstimate(est.d2, est.kappa_qq, est.kappa_pp, est.kappa_pq, est.n_pairs,
                            est.n_pruned, est.alpha, est.prune_radius, est.eps)
    lp, lq, alpha, prune, (s_pp, s_qq, s_pq, s_dd, n_pairs, n_pruned) = _joint_sums(k, P, Q, eps)
    kpp = float(np.sum(lp * lp) + 2.0 * s_pp)
    kqq = float(np.sum(lq * lq) + 2.0 * s_qq)
    kpq = float(np.sum(lp * lq) + s_pq)
    # same estimator written on mass differences to avoid cancellation
    dl = lp - lq
    d2 = float(np.sum(dl * dl) + 2.0 * s_dd)
    return WspdEstimate(max(d2, 0.0), kpp, kqq, kpq, int(n_pairs), int(n_pruned), alpha, prune,
                        float(eps))


def kappa_wspd(k: GaussianKernel, P: WeightedPointSet, Q: WeightedPointSet, eps: float) -> float:
    """Approximate kappa(P, Q) within (eps/4) W_P W_Q."""
    if P is Q:
        empty = WeightedPointSet(np.zeros((0, P.dim)), dim=P.dim)
        lp, _, _, _, sums = _joint_sums(k, P, empty, eps)
        return float(np.sum(lp * lp) + 2.0 * sums[0])
    return wspd_estimate(k, P, Q, eps).kappa_pq


def kernel_distance_wspd(k: GaussianKernel, P: WeightedPointSet, Q: WeightedPointSet,
                         eps: float) -> float:
    """Estimate U of D_K(P, Q)^2 with |U - D_K^2| <= eps W^2."""
    return wspd_estimate(k, P, Q, eps).d2
