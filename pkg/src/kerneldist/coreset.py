"""Random-sampling coresets and the discrepancy measures that certify them."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _backend
from .constants import FEATURE_SAMPLE_C, RANDOM_SAMPLE_C
from .core import GaussianKernel, WeightedPointSet, _check_same_dim, lipschitz_bound, tail_radius
from .errors import BudgetExceededError, InvalidParameterError, UnsupportedDimensionError
from .features import FourierBasis, rff_embed
from .reduce import draw_indices
from .rng import generator

MAX_QUERIES = 4_000_000
BALL_MAX_N = {1: 100_000, 2: 500, 3: 60}


def _unit(name, x) -> float:
    x = float(x)
    if not (0.0 < x < 1.0):
        raise InvalidParameterError(f"{name} must lie in (0, 1), got {x!r}")
    return x


def coreset_size_random(eps: float, delta: float, d: int) -> int:
    """Sample size ceil((C/eps^2)(d + ln(1/delta))), C = RANDOM_SAMPLE_C.

    ``eps = 1`` is accepted and gives the smallest size of the formula.
    """
    eps = float(eps)
    if not (0.0 < eps <= 1.0):
        raise InvalidParameterError(f"eps must lie in (0, 1], got {eps!r}")
    delta = _unit("delta", delta)
    if int(d) < 1:
        raise InvalidParameterError("d must be >= 1")
    return math.ceil((RANDOM_SAMPLE_C / eps**2) * (int(d) + math.log(1.0 / delta)))


def coreset_size_feature(eps: float, delta: float, n: int) -> int:
    """Sample size ceil((C/eps^3) ln(n/delta) ln(ln(n)/(eps delta))), C = FEATURE_SAMPLE_C."""
    eps = _unit("eps", eps)
    delta = _unit("delta", delta)
    n = int(n)
    if n < 1:
        raise InvalidParameterError("n must be >= 1")
    inner = math.log(n) / (eps * delta) if n > 1 else 1.0
    val = (FEATURE_SAMPLE_C / eps**3) * math.log(n / delta) * math.log(max(inner, math.e))
    return max(1, math.ceil(val))


@dataclass(frozen=True, eq=False)
class Coreset:
    """Uniformly reweighted subsample of a parent set.

    Attributes:
        subset: the sample (masses W/k each, duplicates kept).
        indices: parent index of each sample point.
        parent_size: n.
        epsilon_target: eps the size was chosen for (nan if unspecified).
        method: "random" or "feature-verified".
    """

    subset: WeightedPointSet
    indices: np.ndarray
    parent_size: int
    epsilon_target: float = float("nan")
    method: str = "random"

    @property
    def size(self) -> int:
        return self.subset.n


def as_coreset(P: WeightedPointSet) -> Coreset:
    """Wrap a set as its own (trivial) coreset."""
    return Coreset(P, np.arange(P.n), P.n, 0.0, "identity")


def coreset_random(P: WeightedPointSet, k: int, seed: int, *, stream: str = "coreset_p",
                   eps_target: float = float("nan"), method: str = "random") -> Coreset:
    """k i.i.d. mass-proportional draws from P, each with mass W/k.

    Args:
        P: nonempty parent set.
        k: sample size >= 1.
        seed: master seed.
        stream: random stream name (``coreset_p`` or ``coreset_q``).
    """
    k = int(k)
    if k < 1:
        raise InvalidParameterError(f"coreset size must be >= 1, got {k}")
    if P.n == 0:
        raise InvalidParameterError("cannot sample a coreset from an empty set")
    idx = draw_indices(P.masses, k, generator(seed, stream))
    S = WeightedPointSet(P.coords[idx], np.full(k, P.total_mass / k))
    return Coreset(S, idx, P.n, float(eps_target), method)


def _subset(S) -> WeightedPointSet:
    return S.subset if isinstance(S, Coreset) else S


def _merged(S: WeightedPointSet) -> WeightedPointSet:
    """Repeated locations of a sample folded into one point each."""
    if S.n < 2:
        return S
    locs, inv = np.unique(S.coords, axis=0, return_inverse=True)
    if locs.shape[0] == S.n:
        return S
    return WeightedPointSet(locs, np.bincount(inv.reshape(-1), weights=S.masses,
                                              minlength=locs.shape[0]))


# ---------------------------------------------------------------- kernel side

@dataclass(frozen=True)
class DiscrepancyReport:
    """Normalized discrepancies between a set and its coreset.

    ``grid_slack`` bounds how much the supremum over all queries inside the
    grid region can exceed ``kernel_discrepancy``; outside the region the
    difference is below ``tail_bound``.
    """

    kernel_discrepancy: float
    ball_discrepancy: float | None
    query_count: int
    grid_slack: float = 0.0
    tail_bound: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def default_queries(k: GaussianKernel, P: WeightedPointSet, eps: float,
                    max_queries: int = MAX_QUERIES):
    """Parent points plus a grid over the inflated bounding box.

    Returns:
        (queries, grid_slack, tail_bound). The grid spacing is sigma eps / 4
        and the box is inflated by tail_radius(eps / 4).
    """
    eps = _unit("eps", eps)
    h = k.sigma * eps / 4.0
    pad = tail_radius(k, eps / 4.0)
    lo = P.coords.min(axis=0) - pad
    hi = P.coords.max(axis=0) + pad
    counts = np.floor((hi - lo) / h).astype(np.int64) + 1
    total = int(np.prod(counts))
    if total > max_queries:
        raise BudgetExceededError(
            f"query grid would have {total} points (cap {max_queries}); raise eps or pass queries")
    axes = [lo[j] + h * np.arange(counts[j]) for j in range(P.dim)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, P.dim)
    slack = 2.0 * lipschitz_bound(k) * h * math.sqrt(P.dim) / 2.0
    return np.vstack([P.coords, grid]), slack, eps / 4.0


def kernel_discrepancy_details(k: GaussianKernel, P: WeightedPointSet, S, queries=None,
                               eps: float | None = None) -> DiscrepancyReport:
    """max_q |kappa(P,q)/W_P - kappa(S,q)/W_S| over a query set."""
    Sset = _subset(S)
    _check_same_dim(P.dim, Sset.dim)
    slack = tail = 0.0
    if queries is None:
        if eps is None:
            eps = S.epsilon_target if isinstance(S, Coreset) else float("nan")
        if not (eps == eps and 0.0 < eps < 1.0):
            raise InvalidParameterError("default queries need eps in (0, 1)")
        queries, slack, tail = default_queries(k, P, eps)
    else:
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if queries.shape[0] == 0:
            raise InvalidParameterError("query set must be nonempty")
        _check_same_dim(P.dim, queries.shape[1])
    a = _backend.row_sums(queries, P.coords, P.masses / P.total_mass, k.inv_s2)
    b = _backend.row_sums(queries, Sset.coords, Sset.masses / Sset.total_mass, k.inv_s2)
    return DiscrepancyReport(float(np.max(np.abs(a - b))), None, int(queries.shape[0]), slack, tail)


def kernel_discrepancy(k: GaussianKernel, P: WeightedPointSet, S, queries=None,
                       eps: float | None = None) -> float:
    """Normalized kernel discrepancy between P and a coreset S.

    Args:
        k: kernel.
        P: parent set.
        S: Coreset or WeightedPointSet.
        queries: (m, d) query points; defaults to the grid of
            ``default_queries`` for ``eps`` (or the coreset's target).

    Returns:
        max over queries of |kappa(P,q)/W_P - kappa(S,q)/W_S|.
    """
    return kernel_discrepancy_details(k, P, S, queries, eps).kernel_discrepancy


# ------------------------------------------------------------------ ball side

def _hyperplane_extremes(L: np.ndarray, delta: np.ndarray, tol: float) -> tuple[float, float]:
    """Extreme range sums over lower half-spaces of hyperplanes through d+1 rows of L.

    L has shape (m, d+1) with the last column the lifted coordinate.
    Points on a hyperplane may be taken in or out, whichever helps.
    """
    m, D = L.shape
    best_hi, best_lo = 0.0, 0.0
    pos = np.maximum(delta, 0.0)
    neg = np.minimum(delta, 0.0)
    for head in itertools.combinations(range(m), D - 1):
        last0 = head[-1] + 1
        if last0 >= m:
            continue
        base = L[head[0]]
        E = L[list(head[1:])] - base  # (D-2, D)
        F = L[last0:] - base  # candidates for the last point
        B = F.shape[0]
        if D == 3:
            normals = np.cross(E[0][None, :], F)
        else:
            M = np.empty((B, D - 1, D))
            M[:, : D - 2, :] = E
            M[:, D - 2, :] = F
            normals = np.empty((B, D))
            for c in range(D):
                sub = np.delete(M, c, axis=2)
                normals[:, c] = (-1.0) ** c * np.linalg.det(sub)
        nz = normals[:, -1]
        scale = np.linalg.norm(normals, axis=1)
        ok = np.abs(nz) > 1e-12 * np.maximum(scale, 1e-300)
        if not np.any(ok):
            continue
        normals = normals[ok] / scale[ok, None]
        lasts = np.arange(last0, m)[ok]
        side = (L - base) @ normals.T  # (m, B')
        side *= -np.sign(normals[:, -1])[None, :]  # > 0 means strictly inside the ball
        on = np.abs(side) <= tol
        on[list(head), :] = True
        on[lasts, np.arange(lasts.shape[0])] = True
        inside = (side > 0) & ~on
        core = delta @ inside
        hi = core + pos @ on
        lo = core + neg @ on
        best_hi = max(best_hi, float(hi.max()))
        best_lo = min(best_lo, float(lo.min()))
    return best_hi, best_lo


def _ball_extremes(X: np.ndarray, delta: np.ndarray) -> tuple[float, float]:
    m, d = X.shape
    if m == 0:
        return 0.0, 0.0
    if m == 1 or d == 0:
        return max(0.0, float(delta.sum())), min(0.0, float(delta.sum()))
    c = X.mean(axis=0)
    Y = X - c
    scale = float(np.abs(Y).max())
    if scale == 0.0:
        s = float(delta.sum())
        return max(0.0, s), min(0.0, s)
    Y = Y / scale
    _, sv, Vt = np.linalg.svd(Y, full_matrices=False)
    rank = int(np.sum(sv > 1e-10 * sv[0]))
    if rank < d:
        # balls restricted to the affine hull are balls of lower dimension
        return _ball_extremes(Y @ Vt[:rank].T, delta)
    if d == 1:
        order = np.argsort(Y[:, 0], kind="stable")
        pref = np.concatenate([[0.0], np.cumsum(delta[order])])
        return float(pref.max() - pref.min()), float(pref.min() - pref.max())
    if m <= d + 1:
        # affinely independent: every subset is cut out by some ball
        return float(np.maximum(delta, 0).sum()), float(np.minimum(delta, 0).sum())
    L = np.hstack([Y, (Y * Y).sum(axis=1, keepdims=True)])
    return _hyperplane_extremes(L, delta, 1e-10)


def ball_discrepancy(P: WeightedPointSet, S) -> float:
    """max over balls A of |xi_S(A)/W_S - xi_P(A)/W_P|.

    The candidate ranges are all sets cut out by a ball (closed or open)
    through up to d+1 points; in 1D these are the intervals. Exact for
    points in general position, an upper bound otherwise.

    Args:
        P: parent set, d in {1, 2, 3}.
        S: Coreset or WeightedPointSet.
    """
    Sset = _subset(S)
    _check_same_dim(P.dim, Sset.dim)
    d = P.dim
    if d not in BALL_MAX_N:
        raise UnsupportedDimensionError(f"ball discrepancy supports d in {{1,2,3}}, got {d}")
    allc = np.vstack([P.coords, Sset.coords])
    locs, inv = np.unique(allc, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    if locs.shape[0] > BALL_MAX_N[d]:
        raise BudgetExceededError(
            f"ball discrepancy in d={d} is limited to {BALL_MAX_N[d]} distinct points")
    m = locs.shape[0]
    wp = np.bincount(inv[: P.n], weights=P.masses / P.total_mass, minlength=m)
    ws = np.bincount(inv[P.n:], weights=Sset.masses / Sset.total_mass, minlength=m)
    hi, lo = _ball_extremes(locs, ws - wp)
    return max(hi, -lo)


def discrepancy_report(k: GaussianKernel, P: WeightedPointSet, S, eps: float | None = None,
                       with_balls: bool = False) -> DiscrepancyReport:
    rep = kernel_discrepancy_details(k, P, S, eps=eps)
    if with_balls:
        rep = DiscrepancyReport(rep.kernel_discrepancy, ball_discrepancy(P, S), rep.query_count,
                                rep.grid_slack, rep.tail_bound)
    return rep


# --------------------------------------------------------------- feature side

def coreset_feature_bound(P: WeightedPointSet, S, basis: FourierBasis) -> float:
    """Certificate |Phi(P) - Phi(S)|^2 under a Fourier basis."""
    Sset = _merged(_subset(S))
    _check_same_dim(P.dim, Sset.dim)
    diff = rff_embed(basis, P).values - rff_embed(basis, Sset).values
    return float(diff @ diff)


def coreset_feature_verified(P: WeightedPointSet, eps: float, delta: float, seed: int,
                             basis: FourierBasis, k: int | None = None) -> tuple[Coreset, float]:
    """Sample a coreset of the feature-based size and certify it.

    Returns:
        (coreset, certificate) where certificate = |Phi(P) - Phi(S)|^2.
    """
    size = coreset_size_feature(eps, delta, P.n) if k is None else int(k)
    C = coreset_random(P, size, seed, eps_target=eps, method="feature-verified")
    return C, coreset_feature_bound(P, C, basis)
