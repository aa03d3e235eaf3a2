"""Point-set types, the Gaussian kernel and exact kernel distance.

Conventions used throughout the package:

* ``K(p, q) = exp(-|p - q|^2 / sigma^2)`` with a single length scale sigma.
* A weighted point set has total mass ``W`` and normalized diameter
  ``diameter / sigma``.
* ``D_K(P, Q)^2 = kappa(P, P) + kappa(Q, Q) - 2 kappa(P, Q)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from . import _backend
from .constants import RADICAND_TOL
from .errors import DimensionMismatchError, InvalidParameterError, NumericalInstabilityError


def _as_points(coords, name: str = "coords") -> np.ndarray:
    a = np.array(coords, dtype=np.float64, copy=True)
    if a.ndim == 1:
        a = a.reshape(-1, 1) if a.size else a.reshape(0, 1)
    if a.ndim != 2:
        raise InvalidParameterError(f"{name} must be an (n, d) array, got shape {a.shape}")
    if a.shape[1] < 1:
        raise InvalidParameterError(f"{name} must have dimension >= 1")
    if not np.all(np.isfinite(a)):
        raise InvalidParameterError(f"{name} contains non-finite values")
    a += 0.0  # fold -0.0 into +0.0 so equal locations compare bitwise equal
    return a


def _as_vector(p) -> np.ndarray:
    v = np.asarray(p, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise InvalidParameterError(f"a point must be a 1-d vector, got shape {v.shape}")
    return v


def _check_same_dim(a: int, b: int) -> None:
    if a != b:
        raise DimensionMismatchError(f"dimension mismatch: {a} vs {b}")


@dataclass(frozen=True)
class GaussianKernel:
    """Gaussian kernel exp(-|p - q|^2 / sigma^2).

    Args:
        sigma: bandwidth, a positive length.
    """

    sigma: float = 1.0

    def __post_init__(self):
        s = float(self.sigma)
        if not (math.isfinite(s) and s > 0.0):
            raise InvalidParameterError(f"sigma must be a positive finite number, got {self.sigma!r}")
        object.__setattr__(self, "sigma", s)

    @property
    def inv_s2(self) -> float:
        return 1.0 / (self.sigma * self.sigma)

    @property
    def k_plus(self) -> float:
        """Maximum kernel value."""
        return 1.0

    def __call__(self, p, q) -> float:
        return kernel_eval(self, p, q)

    def matrix(self, X, Y) -> np.ndarray:
        """Dense kernel matrix between the rows of X and Y."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        _check_same_dim(X.shape[1], Y.shape[1])
        d2 = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=-1)
        return np.exp(-d2 * self.inv_s2)

    def tail_radius(self, gamma: float) -> float:
        return tail_radius(self, gamma)

    def lipschitz(self) -> float:
        return lipschitz_bound(self)


@dataclass(frozen=True)
class TrivialKernel:
    """K(p, q) = 1 when p and q are bitwise equal, else 0. For tests."""

    def __call__(self, p, q) -> float:
        return kernel_eval(self, p, q)

    @property
    def k_plus(self) -> float:
        return 1.0


@dataclass(frozen=True)
class WeightedPoint:
    coords: np.ndarray
    mass: float = 1.0

    def __post_init__(self):
        c = _as_vector(self.coords).astype(np.float64, copy=True)
        if not np.all(np.isfinite(c)):
            raise InvalidParameterError("point coordinates must be finite")
        m = float(self.mass)
        if not (math.isfinite(m) and m > 0.0):
            raise InvalidParameterError(f"mass must be positive, got {self.mass!r}")
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "mass", m)


@dataclass(frozen=True, eq=False)
class WeightedPointSet:
    """Finite weighted point set in R^d.

    Args:
        coords: (n, d) array of locations.
        masses: (n,) positive masses; defaults to all ones.
        dim: required when ``coords`` is empty.

    The arrays are copied and made read-only.
    """

    coords: np.ndarray
    masses: np.ndarray | None = None
    dim: int = field(default=0)

    def __post_init__(self):
        X = _as_points(self.coords)
        if X.shape[0] == 0 and self.dim:
            X = np.zeros((0, int(self.dim)))
        n = X.shape[0]
        if self.masses is None:
            w = np.ones(n)
        else:
            w = np.array(self.masses, dtype=np.float64, copy=True).reshape(-1)
            if w.shape[0] != n:
                raise InvalidParameterError(f"expected {n} masses, got {w.shape[0]}")
            if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
                raise InvalidParameterError("masses must be positive and finite")
        X.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "coords", X)
        object.__setattr__(self, "masses", w)
        object.__setattr__(self, "dim", X.shape[1])

    @classmethod
    def from_points(cls, points: Sequence[WeightedPoint]) -> "WeightedPointSet":
        if not points:
            raise InvalidParameterError("cannot infer dimension of an empty point list")
        d = points[0].coords.shape[0]
        for p in points:
            _check_same_dim(d, p.coords.shape[0])
        return cls(np.stack([p.coords for p in points]), np.array([p.mass for p in points]))

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def __iter__(self) -> Iterator[WeightedPoint]:
        for x, m in zip(self.coords, self.masses):
            yield WeightedPoint(x, m)

    @property
    def points(self) -> list[WeightedPoint]:
        return list(self)

    @cached_property
    def total_mass(self) -> float:
        return math.fsum(self.masses.tolist())

    @cached_property
    def diameter(self) -> float:
        return _diameter(self.coords)

    def normalized_diameter(self, kernel: GaussianKernel) -> float:
        return self.diameter / kernel.sigma

    def translated(self, t) -> "WeightedPointSet":
        t = _as_vector(t)
        _check_same_dim(self.dim, t.shape[0])
        return WeightedPointSet(self.coords + t, self.masses)

    def with_masses(self, masses) -> "WeightedPointSet":
        return WeightedPointSet(self.coords, masses)

    def union(self, other: "WeightedPointSet") -> "WeightedPointSet":
        _check_same_dim(self.dim, other.dim)
        return WeightedPointSet(np.vstack([self.coords, other.coords]),
                                np.concatenate([self.masses, other.masses]))

    def __repr__(self) -> str:
        return f"WeightedPointSet(n={self.n}, dim={self.dim}, W={self.total_mass:.6g})"


def _diameter(X: np.ndarray) -> float:
    n, d = X.shape
    if n < 2:
        return 0.0
    if d == 1:
        return float(X.max() - X.min())
    if n > 2000:
        try:
            from scipy.spatial import ConvexHull

            X = X[ConvexHull(X).vertices]
        except Exception:  # degenerate hulls: fall back to the blocked scan
            pass
    best = 0.0
    step = max(1, (1 << 20) // X.shape[0])
    for a in range(0, X.shape[0], step):
        blk = X[a:a + step]
        d2 = ((blk[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


def kernel_eval(k, p, q) -> float:
    """Evaluate the kernel at a pair of points.

    Args:
        k: GaussianKernel or TrivialKernel.
        p, q: coordinate vectors of equal length.

    Returns:
        K(p, q).
    """
    p = _as_vector(p)
    q = _as_vector(q)
    _check_same_dim(p.shape[0], q.shape[0])
    if isinstance(k, TrivialKernel):
        return 1.0 if np.array_equal(p, q) else 0.0
    diff = p - q
    return math.exp(-float(diff @ diff) * k.inv_s2)


def tail_radius(k: GaussianKernel, gamma: float) -> float:
    """Distance beyond which the kernel is below gamma: sigma sqrt(ln(1/gamma))."""
    gamma = float(gamma)
    if not (0.0 < gamma < 1.0):
        raise InvalidParameterError(f"gamma must lie in (0, 1), got {gamma!r}")
    return k.sigma * math.sqrt(math.log(1.0 / gamma))


def lipschitz_bound(k: GaussianKernel) -> float:
    """Lipschitz constant of q -> K(p, q): sqrt(2/e) / sigma."""
    return math.sqrt(2.0 / math.e) / k.sigma


def _signed(P: WeightedPointSet, signs):
    if signs is None:
        return P.masses
    return P.masses * np.asarray(signs, dtype=np.float64)


def kappa_exact(k, P: WeightedPointSet, Q: WeightedPointSet, *,
                signs_p=None, signs_q=None) -> float:
    """Exact weighted cross sum kappa(P, Q) = sum_p sum_q mu(p) nu(q) K(p, q).

    Args:
        k: kernel.
        P, Q: point sets of equal dimension.
        signs_p, signs_q: optional +-1 multipliers on the masses.

    Returns:
        The double sum, computed in O(|P||Q|) kernel evaluations.
    """
    _check_same_dim(P.dim, Q.dim)
    wp = _signed(P, signs_p)
    wq = _signed(Q, signs_q)
    if P.n == 0 or Q.n == 0:
        return 0.0
    if isinstance(k, TrivialKernel):
        return _kappa_trivial(P.coords, wp, Q.coords, wq)
    if P is Q and signs_p is None and signs_q is None:
        return _backend.self_sum(P.coords, wp, k.inv_s2)
    return _backend.cross_sum(P.coords, wp, Q.coords, wq, k.inv_s2)


def _kappa_trivial(X, wx, Y, wy) -> float:
    # group equal locations, then sum products of coinciding masses
    allc = np.vstack([X, Y])
    _, inv = np.unique(allc, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    m = inv.max() + 1
    a = np.bincount(inv[: X.shape[0]], weights=wx, minlength=m)
    b = np.bincount(inv[X.shape[0]:], weights=wy, minlength=m)
    return float(np.sum(a * b))


def _canonical_order(P: WeightedPointSet, Q: WeightedPointSet) -> bool:
    """True when (P, Q) is already in canonical order."""
    kp = (P.coords.shape, P.coords.tobytes(), P.masses.tobytes())
    kq = (Q.coords.shape, Q.coords.tobytes(), Q.masses.tobytes())
    return kp <= kq


def combine_radicand(kpp: float, kqq: float, kpq: float, W: float) -> float:
    """Form kpp + kqq - 2 kpq and clamp small negative values to zero.

    Raises:
        NumericalInstabilityError: if the value is below -1e-9 W^2.
    """
    r = (kpp + kqq) - 2.0 * kpq
    if r < 0.0:
        if r < -RADICAND_TOL * W * W:
            raise NumericalInstabilityError(
                f"negative squared distance {r:.3e} beyond tolerance (W={W:.3g})")
        return 0.0
    return r


def kernel_distance_sq_exact(k, P: WeightedPointSet, Q: WeightedPointSet) -> float:
    """Exact D_K(P, Q)^2, clamped at zero within the floating tolerance."""
    _check_same_dim(P.dim, Q.dim)
    if not _canonical_order(P, Q):
        P, Q = Q, P
    kpp = kappa_exact(k, P, P)
    kqq = kappa_exact(k, Q, Q)
    kpq = kappa_exact(k, P, Q)
    W = max(P.total_mass, Q.total_mass)
    return combine_radicand(kpp, kqq, kpq, W)


def kernel_distance_exact(k, P: WeightedPointSet, Q: WeightedPointSet) -> float:
    """Exact kernel distance D_K(P, Q)."""
    return math.sqrt(kernel_distance_sq_exact(k, P, Q))
