"""Finite-dimensional feature maps whose inner products approximate kappa.

Two bases are provided:

* ``FourierBasis``: random Fourier features. Frequencies are Gaussian
  with covariance (2/sigma^2) I, so E cos<w, p - q> = K(p, q). Each
  frequency contributes the pair (cos, sin) scaled by sqrt(2/rho).
* ``TaylorBasis``: the truncated Taylor expansion of the Gaussian around
  a single center x*. With a = (p - x*)/sigma the feature for multiindex
  alpha is sqrt(2^|alpha| / alpha!) mu(p) exp(-|a|^2) a^alpha, for all
  |alpha| <= tau - 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from .constants import RFF_DOMAIN_C, RHO_MAX
from .core import GaussianKernel, WeightedPointSet, _check_same_dim
from .errors import (BasisMismatchError, BudgetExceededError, InvalidParameterError,
                     NumericalInstabilityError)
from .rng import check_seed, generator

_CHUNK = 1 << 22


def _unit_interval(name, x) -> float:
    x = float(x)
    if not (0.0 < x < 1.0):
        raise InvalidParameterError(f"{name} must lie in (0, 1), got {x!r}")
    return x


def _check_rho(rho: int) -> int:
    if rho > RHO_MAX:
        raise BudgetExceededError(f"feature dimension {rho} exceeds the cap {RHO_MAX}")
    return rho


def rff_dimension(eps: float, delta: float, n: int) -> int:
    """Number of Fourier features for an eps-accurate kernel on n points.

    Returns the smallest even rho with 2 n^2 exp(-rho eps^2 / 64) <= delta,
    i.e. 2 ceil((32/eps^2) ln(2 n^2 / delta)).
    """
    eps = _unit_interval("eps", eps)
    delta = _unit_interval("delta", delta)
    n = int(n)
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    half = math.ceil((32.0 / eps**2) * math.log(2.0 * n * n / delta))
    return 2 * max(1, half)


def rff_dimension_domain(eps: float, delta: float, Delta: float, d: int) -> int:
    """Number of Fourier features from the domain size instead of n.

    2 ceil((C d / eps^2) ln(2 Delta / (eps delta))) with C = RFF_DOMAIN_C
    (a heuristic constant, see ``constants``).
    """
    eps = _unit_interval("eps", eps)
    delta = _unit_interval("delta", delta)
    Delta = float(Delta)
    d = int(d)
    if not (Delta > 0.0) or d < 1:
        raise InvalidParameterError("Delta must be positive and d >= 1")
    arg = max(math.log(2.0 * Delta / (eps * delta)), 0.0)
    return 2 * max(1, math.ceil((RFF_DOMAIN_C * d / eps**2) * arg))


@dataclass(frozen=True, eq=False)
class FourierBasis:
    """Random Fourier basis; regenerated bit-identically from its parameters."""

    sigma: float
    d: int
    rho: int
    seed: int
    frequencies: np.ndarray = field(repr=False)

    tag = "rff"

    @property
    def key(self) -> tuple:
        return ("rff", self.sigma, self.d, self.rho, self.seed)

    def __eq__(self, other) -> bool:
        return isinstance(other, FourierBasis) and self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)


def draw_frequencies(sigma: float, d: int, rho: int, seed: int) -> FourierBasis:
    """Draw rho/2 frequencies ~ N(0, (2/sigma^2) I) from the ``rff`` stream."""
    sigma = GaussianKernel(sigma).sigma
    d, rho = int(d), int(rho)
    if d < 1:
        raise InvalidParameterError(f"d must be >= 1, got {d}")
    if rho < 2 or rho % 2:
        raise InvalidParameterError(f"rho must be an even integer >= 2, got {rho}")
    _check_rho(rho)
    seed = check_seed(seed)
    rng = generator(seed, "rff")
    w = rng.standard_normal((rho // 2, d)) * (math.sqrt(2.0) / sigma)
    w.flags.writeable = False
    return FourierBasis(sigma, d, rho, seed, w)


@dataclass(frozen=True, eq=False)
class TaylorBasis:
    """Truncated Taylor basis around ``center`` with degree bound tau - 1."""

    sigma: float
    center: np.ndarray
    tau: int
    multiindices: np.ndarray = field(repr=False)
    log_coef: np.ndarray = field(repr=False)

    tag = "ifgt"

    @property
    def d(self) -> int:
        return self.center.shape[0]

    @property
    def rho(self) -> int:
        return self.multiindices.shape[0]

    @property
    def key(self) -> tuple:
        return ("ifgt", self.sigma, self.tau, self.center.tobytes())

    def __eq__(self, other) -> bool:
        return isinstance(other, TaylorBasis) and self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)


def multiindex_enumerate(d: int, tau: int) -> list[tuple[int, ...]]:
    """All multiindices of total degree <= tau - 1, graded then lexicographic.

    Args:
        d: dimension.
        tau: truncation order.

    Returns:
        List of length C(tau + d - 1, d).
    """
    d, tau = int(d), int(tau)
    if d < 1 or tau < 1:
        raise InvalidParameterError("d and tau must be >= 1")
    out = []
    for deg in range(tau):
        level = []
        for combo in combinations_with_replacement(range(d), deg):
            a = [0] * d
            for j in combo:
                a[j] += 1
            level.append(tuple(a))
        level.sort()
        out.extend(level)
    return out


def ifgt_error_bound(tau: int, Delta: float) -> float:
    """(2^tau / tau!) Delta^(2 tau), evaluated in log space."""
    if Delta <= 0.0:
        return 0.0
    lg = tau * math.log(2.0) - math.lgamma(tau + 1) + 2.0 * tau * math.log(Delta)
    return math.exp(lg) if lg < 700 else math.inf


def ifgt_choose_tau(eps: float, Delta: float, tau_max: int = 10_000) -> int:
    """Smallest tau >= 1 with (2^tau / tau!) Delta^(2 tau) <= eps."""
    eps = _unit_interval("eps", eps)
    Delta = float(Delta)
    if not (Delta > 0.0):
        raise InvalidParameterError(f"Delta must be positive, got {Delta!r}")
    target = math.log(eps)
    for tau in range(1, tau_max + 1):
        lg = tau * math.log(2.0) - math.lgamma(tau + 1) + 2.0 * tau * math.log(Delta)
        if lg <= target:
            return tau
    raise BudgetExceededError(f"no tau <= {tau_max} meets eps={eps} at Delta={Delta}")


def make_taylor_basis(sigma: float, center, tau: int) -> TaylorBasis:
    sigma = GaussianKernel(sigma).sigma
    c = np.array(center, dtype=np.float64).reshape(-1) + 0.0
    c.flags.writeable = False
    tau = int(tau)
    d = c.shape[0]
    rho = math.comb(tau + d - 1, d)
    _check_rho(rho)
    A = np.array(multiindex_enumerate(d, tau), dtype=np.int64).reshape(rho, d)
    deg = A.sum(axis=1)
    lfact = np.array([sum(math.lgamma(int(x) + 1) for x in row) for row in A])
    log_coef = 0.5 * (deg * math.log(2.0) - lfact)
    A.flags.writeable = False
    log_coef.flags.writeable = False
    return TaylorBasis(sigma, c, tau, A, log_coef)


def taylor_center(P: WeightedPointSet, Q: WeightedPointSet | None = None) -> np.ndarray:
    """Mass-weighted centroid of P (union Q)."""
    X, w = P.coords, P.masses
    if Q is not None:
        _check_same_dim(P.dim, Q.dim)
        X = np.vstack([X, Q.coords])
        w = np.concatenate([w, Q.masses])
    return (w[:, None] * X).sum(axis=0) / w.sum()


def taylor_delta(k: GaussianKernel, center, *sets: WeightedPointSet) -> float:
    """Delta = 2 max_u |u - center| / sigma over the given sets."""
    r = 0.0
    for S in sets:
        if S.n:
            r = max(r, float(np.sqrt(((S.coords - center) ** 2).sum(axis=1)).max()))
    return 2.0 * r / k.sigma


def taylor_basis_for(k: GaussianKernel, P: WeightedPointSet, Q: WeightedPointSet | None,
                     eps: float) -> TaylorBasis:
    """Basis centred at the joint centroid with tau chosen for eps."""
    c = taylor_center(P, Q)
    sets = (P,) if Q is None else (P, Q)
    Delta = taylor_delta(k, c, *sets)
    tau = ifgt_choose_tau(eps, Delta) if Delta > 0 else 1
    return make_taylor_basis(k.sigma, c, tau)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    basis: object
    mass: float = float("nan")

    @property
    def rho(self) -> int:
        return self.values.shape[0]

    @property
    def tag(self) -> str:
        return self.basis.tag

    def __add__(self, other: "FeatureVector") -> "FeatureVector":
        _check_basis(self, other)
        return FeatureVector(self.values + other.values, self.basis, self.mass + other.mass)


def _check_basis(a: FeatureVector, b: FeatureVector) -> None:
    if a.basis.key != b.basis.key:
        raise BasisMismatchError("feature vectors come from different bases")


def _check_dim(basis, P: WeightedPointSet) -> None:
    if basis.d != P.dim:
        raise InvalidParameterError(f"basis dimension {basis.d} does not match data {P.dim}")


def rff_point_features(basis: FourierBasis, X, masses=None) -> np.ndarray:
    """Per-point Fourier features, shape (n, rho), interleaved cos/sin."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    ang = X @ basis.frequencies.T
    out = np.empty((X.shape[0], basis.rho))
    s = math.sqrt(2.0 / basis.rho)
    out[:, 0::2] = np.cos(ang) * s
    out[:, 1::2] = np.sin(ang) * s
    if masses is not None:
        out *= np.asarray(masses, dtype=np.float64)[:, None]
    return out


def rff_embed(basis: FourierBasis, P: WeightedPointSet) -> FeatureVector:
    """Sum of mass-weighted Fourier features of P."""
    _check_dim(basis, P)
    half = basis.rho // 2
    acc_c = np.zeros(half)
    acc_s = np.zeros(half)
    step = max(1, _CHUNK // max(half, 1))
    W = basis.frequencies.T
    for a in range(0, P.n, step):
        ang = P.coords[a:a + step] @ W
        m = P.masses[a:a + step]
        acc_c += m @ np.cos(ang)
        acc_s += m @ np.sin(ang)
    v = np.empty(basis.rho)
    s = math.sqrt(2.0 / basis.rho)
    v[0::2] = acc_c * s
    v[1::2] = acc_s * s
    return FeatureVector(v, basis, P.total_mass)


def ifgt_point_features(basis: TaylorBasis, X, masses=None) -> np.ndarray:
    """Per-point Taylor features, shape (n, rho)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    a = (X - basis.center) / basis.sigma
    n = a.shape[0]
    A = basis.multiindices
    sq = (a * a).sum(axis=1)
    amax = float(np.abs(a).max()) if n else 0.0
    if basis.tau * math.log(max(amax, 1.0)) < 600.0:
        pw = np.ones((basis.tau, n, basis.d))
        for j in range(1, basis.tau):
            pw[j] = pw[j - 1] * a
        mono = np.ones((A.shape[0], n))
        for j in range(basis.d):
            mono *= pw[A[:, j], :, j]
        out = (np.exp(basis.log_coef)[:, None] * mono * np.exp(-sq)[None, :]).T
    else:
        # large |a|: assemble each entry as sign * exp(log magnitude)
        with np.errstate(divide="ignore", invalid="ignore"):
            la = np.log(np.abs(a))
            logm = basis.log_coef[:, None] - sq[None, :]
            sign = np.ones((A.shape[0], n))
            for j in range(basis.d):
                e = A[:, j][:, None]
                logm = logm + np.where(e > 0, e * la[None, :, j], 0.0)
                sign *= np.where((e % 2 == 1) & (a[None, :, j] < 0), -1.0, 1.0)
        if np.any(logm > 700.0):
            raise NumericalInstabilityError("Taylor feature magnitude overflows")
        out = (sign * np.exp(logm)).T
    if masses is not None:
        out *= np.asarray(masses, dtype=np.float64)[:, None]
    return out


def ifgt_embed(basis: TaylorBasis, P: WeightedPointSet) -> FeatureVector:
    """Sum of mass-weighted Taylor features of P."""
    _check_dim(basis, P)
    v = np.zeros(basis.rho)
    step = max(1, _CHUNK // (basis.rho * max(basis.tau, 1)))
    for a in range(0, P.n, step):
        v += ifgt_point_features(basis, P.coords[a:a + step], P.masses[a:a + step]).sum(axis=0)
    if not np.all(np.isfinite(v)):
        raise NumericalInstabilityError("non-finite Taylor features")
    return FeatureVector(v, basis, P.total_mass)


def embed(basis, P: WeightedPointSet) -> FeatureVector:
    if isinstance(basis, FourierBasis):
        return rff_embed(basis, P)
    if isinstance(basis, TaylorBasis):
        return ifgt_embed(basis, P)
    raise InvalidParameterError(f"unknown basis {type(basis).__name__}")


def feature_inner(a: FeatureVector, b: FeatureVector) -> float:
    _check_basis(a, b)
    return float(a.values @ b.values)


def kernel_distance_features(embed_P: FeatureVector, embed_Q: FeatureVector) -> float:
    """Squared feature-space distance |Phi(P) - Phi(Q)|^2."""
    _check_basis(embed_P, embed_Q)
    diff = embed_P.values - embed_Q.values
    return max(float(diff @ diff), 0.0)


def nn_query(corpus: list[FeatureVector], query: FeatureVector) -> int:
    """Index of the corpus vector closest to ``query`` (ties: lowest index)."""
    if not corpus:
        raise InvalidParameterError("empty corpus")
    for c in corpus:
        _check_basis(c, query)
    M = np.stack([c.values for c in corpus])
    d2 = ((M - query.values) ** 2).sum(axis=1)
    return int(np.argmin(d2))
