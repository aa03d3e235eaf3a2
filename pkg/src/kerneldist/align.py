"""Translation and rigid alignment by grid search.

A motion maps ``q -> R (q - anchor) + anchor + T``. Maximizing
``kappa(P, motion(Q))`` minimizes D_K^2 because the two self sums do not
depend on the motion.

Candidate sets are fixed lattices: translations on ``(s / sqrt(d)) Z^d``
and rotations on uniform angle grids (2D) or a Fibonacci direction set
times a spin grid (3D). Instead of scoring every candidate, the search
visits groups of candidates best-first. Each group carries an upper bound
on the objective of every candidate inside it, and a group is discarded
only when that bound is below the best value found so far. The result is
therefore the exact maximizer over the candidate set; ties go to the
lexicographically smallest candidate key.

Displacement budget: if every point of Q lands within ``delta`` of where
the optimal motion puts it, the objective drops by at most
``W_P W_Q L delta`` with ``L = sqrt(2/e) / sigma``, so D_K^2 rises by at
most twice that. The grids below keep ``delta <= eps sigma / 2``, i.e. a
D_K^2 excess of at most ``0.86 eps W^2``.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .core import (GaussianKernel, WeightedPointSet, _as_points, _as_vector, _check_same_dim,
                   kernel_distance_sq_exact, lipschitz_bound)
from .coreset import coreset_random, coreset_size_random
from .errors import BudgetExceededError, InvalidParameterError, UnsupportedDimensionError

TWO_PI = 2.0 * math.pi
ORTHO_TOL = 1e-12
MAX_RIGID_N = {2: 60, 3: 25}
DEFAULT_MAX_WORK = 4e9
LEAF_ANGLES = 8
# batches of best-first expansion between two greedy dives
DIVE_EVERY = 100


# ---------------------------------------------------------------- motions

@dataclass(frozen=True, eq=False)
class RigidMotion:
    """Rotation about ``anchor`` followed by a translation.

    Args:
        translation: (d,) vector T.
        rotation: (d, d) special orthogonal matrix R.
        anchor: (d,) point fixed by R (default origin).
    """

    translation: np.ndarray
    rotation: np.ndarray
    anchor: np.ndarray | None = None

    def __post_init__(self):
        T = _as_vector(self.translation).astype(np.float64, copy=True)
        d = T.shape[0]
        R = np.array(self.rotation, dtype=np.float64, copy=True)
        if R.shape != (d, d):
            raise InvalidParameterError(f"rotation must be {d}x{d}, got shape {R.shape}")
        a = np.zeros(d) if self.anchor is None else _as_vector(self.anchor).astype(np.float64)
        if a.shape[0] != d:
            raise InvalidParameterError(f"anchor must have length {d}")
        if not (np.all(np.isfinite(T)) and np.all(np.isfinite(R)) and np.all(np.isfinite(a))):
            raise InvalidParameterError("motion contains non-finite values")
        if np.max(np.abs(R @ R.T - np.eye(d))) > ORTHO_TOL or np.linalg.det(R) < 0.0:
            raise InvalidParameterError("rotation must be orthonormal with determinant +1")
        for arr in (T, R, a):
            arr.flags.writeable = False
        object.__setattr__(self, "translation", T)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "anchor", a)

    @classmethod
    def identity(cls, d: int) -> "RigidMotion":
        return cls(np.zeros(d), np.eye(d))

    @classmethod
    def from_translation(cls, t) -> "RigidMotion":
        t = _as_vector(t)
        return cls(t, np.eye(t.shape[0]))

    @classmethod
    def from_angle(cls, theta: float, translation=(0.0, 0.0), anchor=None) -> "RigidMotion":
        return cls(translation, rotation_2d(theta), anchor)

    @property
    def dim(self) -> int:
        return self.translation.shape[0]

    @property
    def angle(self) -> float:
        if self.dim != 2:
            raise InvalidParameterError("angle is defined for planar motions only")
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return (X - self.anchor) @ self.rotation.T + (self.anchor + self.translation)

    def __call__(self, Q: WeightedPointSet) -> WeightedPointSet:
        _check_same_dim(self.dim, Q.dim)
        return WeightedPointSet(self.apply(Q.coords), Q.masses, dim=Q.dim)

    def canonical(self) -> "RigidMotion":
        """Equivalent motion with the anchor at the origin."""
        t = self.anchor - self.rotation @ self.anchor + self.translation
        return RigidMotion(t, self.rotation)

    def to_dict(self) -> dict:
        if self.dim == 2:
            rot = self.angle
        else:
            rot = self.rotation.reshape(-1).tolist()
        return {"dim": self.dim, "translation": self.translation.tolist(), "rotation": rot,
                "anchor": self.anchor.tolist()}

    @classmethod
    def from_dict(cls, obj: dict) -> "RigidMotion":
        try:
            t = np.asarray(obj["translation"], dtype=np.float64)
            d = t.shape[0]
            rot = obj.get("rotation")
            if rot is None:
                R = np.eye(d)
            elif d == 2 and np.ndim(rot) == 0:
                R = rotation_2d(float(rot))
            else:
                R = np.asarray(rot, dtype=np.float64).reshape(d, d)
            return cls(t, R, obj.get("anchor"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidParameterError):
                raise
            raise InvalidParameterError(f"malformed motion: {exc}") from None


def rotation_2d(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def axis_rotation(axis, theta) -> np.ndarray:
    """Right-handed rotation by ``theta`` about a unit axis in 3D.

    Broadcasts over leading dimensions of ``axis`` and ``theta``.
    """
    u = np.asarray(axis, dtype=np.float64)
    th = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(th)[..., None, None], np.sin(th)[..., None, None]
    z = np.zeros(u.shape[:-1])
    ux = np.stack([np.stack([z, -u[..., 2], u[..., 1]], -1),
                   np.stack([u[..., 2], z, -u[..., 0]], -1),
                   np.stack([-u[..., 1], u[..., 0], z], -1)], -2)
    return c * np.eye(3) + s * ux + (1.0 - c) * (u[..., :, None] * u[..., None, :])


def _perpendicular(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    a = np.where((np.abs(u[..., 0]) < 0.9)[..., None], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    e = np.cross(u, a)
    return e / np.linalg.norm(e, axis=-1, keepdims=True)


def minimal_rotation(v, u) -> np.ndarray:
    """Smallest rotation taking unit vector v to unit vector u (broadcasts)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    v, u = np.broadcast_arrays(v, u)
    axis = np.cross(v, u)
    s = np.linalg.norm(axis, axis=-1)
    c = np.clip(np.sum(v * u, axis=-1), -1.0, 1.0)
    degenerate = s < 1e-15
    safe = np.where(degenerate[..., None], _perpendicular(v), axis / np.where(s, s, 1.0)[..., None])
    angle = np.where(degenerate, np.where(c > 0.0, 0.0, math.pi), np.arctan2(s, c))
    return axis_rotation(safe, angle)


def fibonacci_sphere(n: int) -> np.ndarray:
    """n nearly uniform unit vectors on the sphere."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = i * (math.pi * (3.0 - math.sqrt(5.0)))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def sphere_count(res: float) -> int:
    """Fibonacci set size whose covering radius is below ``res`` radians."""
    return max(1, math.ceil(4.0 * math.pi / (res * res)))


def angle_count(step: float) -> int:
    return max(1, math.ceil(TWO_PI / step))


def alignment_objective(k: GaussianKernel, P: WeightedPointSet, Q: WeightedPointSet,
                        motion: RigidMotion) -> float:
    """kappa(P, motion(Q)) by direct summation."""
    _check_same_dim(P.dim, Q.dim)
    _check_same_dim(P.dim, motion.dim)
    c = motion.canonical()
    return float(_backend.motion_batch(P.coords, P.masses, Q.coords, Q.masses,
                                       c.rotation[None], c.translation[None], k.inv_s2)[0])


# ---------------------------------------------------------------- grids

@dataclass(frozen=True, eq=False)
class TranslationGrid:
    """Lattice points of ``(eps_g sigma / sqrt(d)) Z^d`` near a center.

    The radius is widened by the covering radius ``eps_g sigma / 2`` so a
    ball that holds no lattice point still gets its nearest ones.
    """

    center: np.ndarray
    radius: float
    spacing: float
    sigma: float
    step: float
    indices: np.ndarray
    points: np.ndarray

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def covering_radius(self) -> float:
        return 0.5 * self.spacing * self.sigma


def _lattice_ball(center: np.ndarray, radius: float, step: float) -> np.ndarray:
    lo = np.floor((center - radius) / step).astype(np.int64)
    hi = np.ceil((center + radius) / step).astype(np.int64)
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    Z = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, center.shape[0])
    keep = np.sum((Z * step - center) ** 2, axis=1) <= radius * radius
    return Z[keep]


def translation_grid(k: GaussianKernel, p, eps_g: float, Lambda: float) -> TranslationGrid:
    """Lattice points within ``Lambda`` (plus the covering radius) of ``p``.

    Args:
        k: kernel supplying sigma.
        p: center.
        eps_g: relative spacing; the lattice step is eps_g sigma / sqrt(d).
        Lambda: absolute search radius.
    """
    p = _as_vector(p).astype(np.float64)
    eps_g = float(eps_g)
    if not (eps_g > 0.0 and math.isfinite(eps_g)):
        raise InvalidParameterError(f"grid spacing must be positive, got {eps_g!r}")
    if not (Lambda >= 0.0 and math.isfinite(Lambda)):
        raise InvalidParameterError(f"grid radius must be non-negative, got {Lambda!r}")
    d = p.shape[0]
    step = eps_g * k.sigma / math.sqrt(d)
    Z = _lattice_ball(p, Lambda + 0.5 * eps_g * k.sigma, step)
    return TranslationGrid(p, float(Lambda), eps_g, k.sigma, step, Z, Z * step)


@dataclass(frozen=True, eq=False)
class RotationGrid:
    """Rotations fixing ``fixed`` that bring ``q`` near ``p``.

    Rotation i maps x to ``rotations[i] (x - anchor) + anchor``. ``angles``
    is set for one-parameter grids, ``directions`` for the 3D sphere grid.
    """

    p: np.ndarray
    q: np.ndarray
    fixed: np.ndarray
    anchor: np.ndarray
    eps_r: float
    Lambda: float
    dim: int
    tau: int
    rotations: np.ndarray
    angles: np.ndarray | None = None
    directions: np.ndarray | None = None
    axis: np.ndarray | None = None

    def __len__(self) -> int:
        return self.rotations.shape[0]

    def images(self) -> np.ndarray:
        """Image of q under every rotation."""
        return np.einsum("mij,j->mi", self.rotations, self.q - self.anchor) + self.anchor


def _arc_angles(rho: float, psi: float, axial: float, r_o: float, phi_q: float,
                Lambda: float, step: float) -> np.ndarray:
    """Grid rotation angles whose cells meet the arc of the orbit near p."""
    J = angle_count(step)
    h = TWO_PI / J
    theta = np.arange(J) * h
    reach2 = Lambda * Lambda - axial * axial
    if reach2 < 0.0:
        return theta[:0]
    if rho * r_o == 0.0:
        cth = -2.0 if rho * rho + r_o * r_o <= reach2 else 2.0
    else:
        cth = (rho * rho + r_o * r_o - reach2) / (2.0 * rho * r_o)
    if cth > 1.0:
        return theta[:0]
    if cth <= -1.0:
        return theta
    beta = math.acos(cth)
    mid = psi - phi_q
    off = np.abs((theta - mid + math.pi) % TWO_PI - math.pi)
    return theta[off <= beta + 0.5 * h]


def rotation_grid(p, q, S, eps_r: float, Lambda: float, d: int) -> RotationGrid:
    """Rotational grid around p with respect to q, keeping S fixed.

    Args:
        p: target point; candidates move q to within Lambda of p.
        q: point being rotated.
        S: (s, d) fixed points, s < d. The first one is the anchor (the
            origin if S is empty). Collinear triples in 3D reduce to an axis.
        eps_r: absolute tolerance; q moves by at most eps_r between a
            reachable position and its nearest candidate.
        Lambda: absolute extent around p.
        d: dimension, 2 or 3.

    Returns:
        RotationGrid. In 2D and for a 3D axis the angles are multiples of
        ``2 pi / ceil(2 pi max(r, Lambda) / eps_r)`` with r the orbit
        radius; in 3D about a point the images of q follow a Fibonacci set
        of ``ceil(4 pi / res^2)`` directions, ``res = eps_r / max(r, Lambda)``.
    """
    if d not in (2, 3):
        raise UnsupportedDimensionError(f"rotation grids support d in {{2, 3}}, got {d}")
    p = _as_vector(p).astype(np.float64)
    q = _as_vector(q).astype(np.float64)
    if p.shape[0] != d or q.shape[0] != d:
        raise InvalidParameterError(f"p and q must have length {d}")
    S = np.zeros((0, d)) if S is None or len(S) == 0 else _as_points(S, "S")
    if S.shape[1] != d:
        raise InvalidParameterError(f"fixed points must have dimension {d}")
    eps_r, Lambda = float(eps_r), float(Lambda)
    if not (eps_r > 0.0 and math.isfinite(eps_r)):
        raise InvalidParameterError(f"eps_r must be positive, got {eps_r!r}")
    if not (Lambda > 0.0 and math.isfinite(Lambda)):
        raise InvalidParameterError(f"Lambda must be positive, got {Lambda!r}")
    anchor = S[0].copy() if S.shape[0] else np.zeros(d)
    # reduce S to its affinely independent part
    rank = 0
    axis = None
    if S.shape[0] > 1:
        D = S[1:] - anchor
        rank = int(np.linalg.matrix_rank(D, tol=1e-12 * max(1.0, float(np.abs(D).max()))))
        if rank >= 1:
            axis = D[np.argmax(np.linalg.norm(D, axis=1))]
            axis = axis / np.linalg.norm(axis)
    if rank + 1 >= d:
        raise InvalidParameterError(f"fixed set spans {rank + 1} points; need fewer than {d}")
    tau = d - (rank + 1) if S.shape[0] else d - 1
    ident = np.eye(d)[None]

    def done(rot, **kw):
        return RotationGrid(p, q, S, anchor, eps_r, Lambda, d, tau, rot, **kw)

    if d == 2 or axis is not None:
        if axis is None:
            e1, e2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
            w, v = q - anchor, p - anchor
            axial = 0.0
        else:
            w0 = q - anchor
            w = w0 - (w0 @ axis) * axis
            v0 = p - anchor
            axial = float(v0 @ axis - w0 @ axis)
            v = v0 - (v0 @ axis) * axis
            e1 = w / np.linalg.norm(w) if np.linalg.norm(w) > 0.0 else _perpendicular(axis)
            e2 = np.cross(axis, e1)
        r_o = float(np.linalg.norm(w))
        if r_o == 0.0:
            return done(ident, angles=np.zeros(1), axis=axis)
        theta = _arc_angles(float(np.linalg.norm(v)), math.atan2(v @ e2, v @ e1), axial, r_o,
                            math.atan2(w @ e2, w @ e1), Lambda, eps_r / max(r_o, Lambda))
        if d == 2:
            rot = np.array([rotation_2d(t) for t in theta]).reshape(-1, 2, 2)
        else:
            rot = np.array([axis_rotation(axis, t) for t in theta]).reshape(-1, 3, 3)
        return done(rot, angles=theta, axis=axis)

    w = q - anchor
    r_o = float(np.linalg.norm(w))
    if r_o == 0.0:
        return done(ident, directions=np.zeros((0, 3)))
    res = eps_r / max(r_o, Lambda)
    U = fibonacci_sphere(sphere_count(res))
    dist = np.linalg.norm(anchor + r_o * U - p, axis=1)
    U = U[dist <= Lambda + r_o * res]
    v = w / r_o
    rot = np.array([minimal_rotation(v, u) for u in U]).reshape(-1, 3, 3)
    return done(rot, directions=U)


# ---------------------------------------------------------------- search engine

@dataclass(frozen=True, eq=False)
class AlignmentResult:
    """Best motion found and its D_K^2 on the input sets.

    Iterating yields ``(motion, d2)``.
    """

    motion: RigidMotion
    d2: float
    objective: float
    n_evaluated: int
    n_nodes: int
    params: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.motion, self.d2))

    @property
    def translation(self) -> np.ndarray:
        return self.motion.canonical().translation


def _check_eps(eps) -> float:
    eps = float(eps)
    if not (0.0 < eps < 1.0):
        raise InvalidParameterError(f"eps must lie in (0, 1), got {eps!r}")
    return eps


def _merge(P: WeightedPointSet):
    """Distinct locations (first-appearance order) with summed masses."""
    locs, first, inv = np.unique(P.coords, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    relabel = np.empty_like(order)
    relabel[order] = np.arange(order.shape[0])
    w = np.bincount(relabel[inv.reshape(-1)], weights=P.masses, minlength=order.shape[0])
    return np.ascontiguousarray(locs[order]), w


def _box_distance(lo: np.ndarray, hi: np.ndarray, S: np.ndarray) -> np.ndarray:
    """(B, m) distances from points S (B or 1, m, d) to boxes (B, d)."""
    gap = np.maximum(np.maximum(lo[:, None, :] - S, S - hi[:, None, :]), 0.0)
    return np.sqrt(np.sum(gap * gap, axis=-1))


class _Search:
    """Best-first branch and bound over a lattice of candidates.

    Nodes are tuples ``(i, zlo, zhi, level, did, ja, jb)``; their natural
    ordering is the tie-break order. Subclasses provide ``bound``,
    ``expand``, ``is_leaf`` and ``evaluate``.

    A node is discarded once its upper bound falls below the incumbent
    plus ``gap``; with ``gap = 0`` the search returns the exact argmax,
    otherwise a candidate within ``gap`` of it.
    """

    gap = 0.0

    def __init__(self, k: GaussianKernel, Pl, wp, Ql, wq, step: float, reach: float,
                 max_work: float):
        self.k = k
        self.inv_s2 = k.inv_s2
        self.Pl, self.wp, self.Ql, self.wq = Pl, wp, Ql, wq
        self.d = Pl.shape[1]
        self.step = step
        self.reach = reach
        self.max_work = float(max_work)
        self.work = 0.0
        self.n_evaluated = 0
        self.n_nodes = 0
        self.pairs = Pl.shape[0] * Ql.shape[0]
        self.batch = int(max(1, min(512, 2_000_000 // max(1, self.pairs))))
        self.tol = 1e-12 * float(wp.sum() * wq.sum())

    def limit(self, best: float) -> float:
        return best + self.gap - self.tol

    def charge(self, units: float) -> None:
        self.work += units
        if self.work > self.max_work:
            raise BudgetExceededError(
                f"alignment search exceeded its work budget ({self.max_work:.3g} kernel "
                "evaluations); use the coreset variant or a larger eps")

    def box_geometry(self, nodes):
        zlo = np.array([nd[1] for nd in nodes], dtype=np.float64)
        zhi = np.array([nd[2] for nd in nodes], dtype=np.float64)
        t0 = 0.5 * self.step * (zlo + zhi)
        rt = 0.5 * self.step * np.sqrt(np.sum((zhi - zlo) ** 2, axis=1))
        return zlo * self.step, zhi * self.step, t0, rt

    @staticmethod
    def split_box(nd):
        zlo, zhi = nd[1], nd[2]
        ax = max(range(len(zlo)), key=lambda a: zhi[a] - zlo[a])
        mid = (zlo[ax] + zhi[ax]) // 2
        hi1 = zhi[:ax] + (mid,) + zhi[ax + 1:]
        lo2 = zlo[:ax] + (mid + 1,) + zlo[ax + 1:]
        return [(nd[0], zlo, hi1) + nd[3:], (nd[0], lo2, zhi) + nd[3:]]

    def push(self, heap, nodes, limit):
        if not nodes:
            return
        ubs = []
        for a in range(0, len(nodes), self.batch):
            chunk = nodes[a:a + self.batch]
            self.charge(len(chunk) * self.pairs)
            ubs.append(self.bound(chunk))
        ub = np.concatenate(ubs)
        self.n_nodes += len(nodes)
        for u, nd in zip(ub.tolist(), nodes):
            if u >= limit:
                heapq.heappush(heap, (-u, nd))

    def score(self, leaves, state):
        keys, R, T = self.evaluate(leaves)
        self.charge(len(keys) * self.pairs)
        self.n_evaluated += len(keys)
        vals = _backend.motion_batch(self.Pl, self.wp, self.Ql, self.wq, R, T, self.inv_s2)
        for j, (v, key) in enumerate(zip(vals.tolist(), keys)):
            if v > state[0] or (v == state[0] and key < state[1]):
                state[:] = [v, key, (R[j].copy(), T[j].copy())]

    def dive(self, heap, state):
        """Follow the best child down to a leaf, queueing the siblings."""
        nd = heapq.heappop(heap)[1]
        while not self.is_leaf(nd):
            children = self.expand(nd)
            self.charge(len(children) * self.pairs)
            self.n_nodes += len(children)
            ub = self.bound(children)
            limit = self.limit(state[0])
            if ub.max() < limit:
                return
            guide = np.where(ub >= limit, self.probe(children, ub), -math.inf)
            top = int(np.argmax(guide))
            for j, (u, c) in enumerate(zip(ub.tolist(), children)):
                if j != top and u >= limit:
                    heapq.heappush(heap, (-u, c))
            nd = children[top]
        self.score([nd], state)

    def probe(self, nodes, ub):
        """Score used to pick the child a dive follows (default: the bound)."""
        return ub

    def run(self, roots, dives: int = 8):
        heap = []
        state = [-math.inf, None, None]
        self.push(heap, roots, -math.inf)
        for _ in range(dives):
            if heap:
                self.dive(heap, state)
        rounds = 0
        while heap:
            limit = self.limit(state[0])
            if -heap[0][0] < limit:
                break
            batch = []
            while heap and len(batch) < self.batch and -heap[0][0] >= limit:
                batch.append(heapq.heappop(heap)[1])
            leaves = [nd for nd in batch if self.is_leaf(nd)]
            if leaves:
                self.score(leaves, state)
            children = []
            for nd in batch:
                if not self.is_leaf(nd):
                    children.extend(self.expand(nd))
            self.push(heap, children, self.limit(state[0]))
            rounds += 1
            if rounds % DIVE_EVERY == 0 and heap:
                self.dive(heap, state)
        return tuple(state)


class _TranslationSearch(_Search):
    """Candidates: lattice translations within reach of some p - q."""

    def __init__(self, *args):
        super().__init__(*args)
        self.seeds = (self.Pl[:, None, :] - self.Ql[None, :, :]).reshape(-1, self.d)
        self.sw = np.outer(self.wp, self.wq).reshape(-1)

    def roots(self):
        lo = np.floor((self.seeds.min(axis=0) - self.reach) / self.step).astype(np.int64)
        hi = np.ceil((self.seeds.max(axis=0) + self.reach) / self.step).astype(np.int64)
        return [(0, tuple(lo.tolist()), tuple(hi.tolist()), 0, 0, 0, 0)]

    def bound(self, nodes):
        lo, hi, _, _ = self.box_geometry(nodes)
        return _backend.translation_bounds(self.seeds, self.sw, lo, hi, self.reach, self.inv_s2)

    @staticmethod
    def is_leaf(nd):
        return nd[1] == nd[2]

    def expand(self, nd):
        return self.split_box(nd)

    def evaluate(self, leaves):
        Z = np.array([nd[1] for nd in leaves], dtype=np.float64)
        keys = [(nd[1],) for nd in leaves]
        R = np.broadcast_to(np.eye(self.d), (len(leaves), self.d, self.d))
        return keys, np.ascontiguousarray(R), Z * self.step


def _sphere_tree(n: int):
    """Coarse-to-fine Fibonacci levels over a fine set of n directions.

    Returns (U, rad, children): per level the unit vectors, the exact
    largest angle from each vector to the fine directions below it, and
    the child ids on the next level. The last level is the fine set.
    """
    sizes = [n]
    while sizes[-1] > 48:
        sizes.append(max(12, sizes[-1] // 4))
    sizes.reverse()
    U = [fibonacci_sphere(s) for s in sizes]
    L = len(sizes) - 1
    parent = [None]
    for lv in range(1, L + 1):
        par = np.empty(sizes[lv], dtype=np.int64)
        for a in range(0, sizes[lv], 4096):
            par[a:a + 4096] = np.argmax(U[lv][a:a + 4096] @ U[lv - 1].T, axis=1)
        parent.append(par)
    anc = [None] * (L + 1)
    anc[L] = np.arange(n)
    for lv in range(L - 1, -1, -1):
        anc[lv] = parent[lv + 1][anc[lv + 1]]
    rad, children = [], []
    for lv in range(L + 1):
        ang = np.arccos(np.clip(np.einsum("ij,ij->i", U[L], U[lv][anc[lv]]), -1.0, 1.0))
        r = np.full(sizes[lv], -1.0)
        np.maximum.at(r, anc[lv], ang)
        rad.append(r * (1.0 + 1e-9))
        if lv < L:
            alive = np.zeros(sizes[lv + 1], dtype=bool)
            alive[anc[lv + 1]] = True
            kids = [[] for _ in range(sizes[lv])]
            for c in np.flatnonzero(alive).tolist():
                kids[parent[lv + 1][c]].append(c)
            children.append(kids)
    return U, rad, children


class _RigidSearch(_Search):
    """Candidates: anchor q1, lattice translation of q1, rotation about its image.

    2D rotations are angles ``j h``; nodes carry an interval of j. In 3D a
    rotation is the minimal rotation taking the direction v2 of the point
    farthest from q1 onto a fine Fibonacci direction u, followed by a spin
    ``j h`` about u. Nodes carry a direction cell of a coarse-to-fine
    hierarchy; bounds take the maximum over a spin grid whose step matches
    the cell size, and leaves score every fine spin.

    Node layout: ``(anchor, zlo, zhi, level, cell, ja, jb)``. Level -1 is
    the rotation-free radial bound used before any direction is chosen.
    """

    def __init__(self, k, Pl, wp, Ql, wq, step, reach, max_work, eps_r, lam_r, anchors):
        super().__init__(k, Pl, wp, Ql, wq, step, 0.0, max_work)
        m = Ql.shape[0]
        self.anchors = list(anchors)
        self.reach_i = np.asarray(reach, dtype=np.float64)
        self.Qrel = Ql[None, :, :] - Ql[:, None, :]          # (m, m, d)
        self.rq = np.sqrt(np.sum(self.Qrel ** 2, axis=-1))
        self.rmax = self.rq.max(axis=1)
        self.scale = np.maximum(self.rmax, lam_r)
        self.h = np.full(m, TWO_PI)
        self.J = np.ones(m, dtype=np.int64)
        self.trivial = self.rmax == 0.0
        self.v2 = np.tile([0.0, 0.0, 1.0], (m, 1))
        self.rperp = np.zeros((m, m))
        self.ndir = np.zeros(m, dtype=np.int64)
        self._trees = {}
        if self.d == 2:
            self.phiq = np.arctan2(self.Qrel[..., 1], self.Qrel[..., 0])
        for i in self.anchors:
            if self.trivial[i]:
                continue
            J = angle_count(eps_r / self.scale[i])
            if self.d == 3:
                far = int(np.argmax(self.rq[i]))
                v = self.Qrel[i, far] / self.rq[i, far]
                self.v2[i] = v
                hq = self.Qrel[i] @ v
                self.rperp[i] = np.sqrt(np.maximum(self.rq[i] ** 2 - hq * hq, 0.0))
                # direction error and spin error each move q by at most eps_r / 2
                self.ndir[i] = sphere_count(eps_r / (2.0 * self.scale[i]))
                if self.rperp[i].max() <= 1e-12 * self.rmax[i]:
                    J = 1
            self.J[i], self.h[i] = J, TWO_PI / J

    def tree(self, i: int):
        n = int(self.ndir[i])
        if n not in self._trees:
            self._trees[n] = _sphere_tree(n)
        return self._trees[n]

    def fine_level(self, i: int) -> int:
        return len(self.tree(i)[0]) - 1

    def roots(self):
        out = []
        for i in self.anchors:
            seeds = self.Pl - self.Ql[i]
            r = self.reach_i[i]
            lo = np.floor((seeds.min(axis=0) - r) / self.step).astype(np.int64)
            hi = np.ceil((seeds.max(axis=0) + r) / self.step).astype(np.int64)
            zlo, zhi = tuple(lo.tolist()), tuple(hi.tolist())
            if self.d == 2:
                out.append((i, zlo, zhi, 0, 0, 0, int(self.J[i]) - 1))
            elif self.trivial[i]:
                out.append((i, zlo, zhi, 0, -1, 0, 0))
            else:
                out.append((i, zlo, zhi, -1, 0, 0, 0))
        return out

    # -- tree structure

    def is_fine(self, nd) -> bool:
        return nd[4] < 0 or nd[3] == self.fine_level(nd[0])

    def is_leaf(self, nd):
        if nd[1] != nd[2]:
            return False
        if self.d == 2:
            return nd[6] - nd[5] < LEAF_ANGLES
        return self.is_fine(nd)

    def rot_disp(self, nd) -> float:
        i, lev = nd[0], nd[3]
        if self.d == 2:
            return 0.5 * (nd[6] - nd[5]) * self.h[i] * self.rmax[i]
        if self.is_fine(nd):
            return 0.0
        rad = self.tree(i)[1]
        r = rad[0].max() if lev < 0 else rad[lev][nd[4]]
        return 2.0 * r * self.rmax[i]

    def expand(self, nd):
        i, zlo, zhi, lev, cell, ja, jb = nd
        rt = 0.5 * self.step * math.sqrt(sum((b - a) ** 2 for a, b in zip(zlo, zhi)))
        if zlo != zhi and rt >= self.rot_disp(nd):
            return self.split_box(nd)
        if self.d == 2:
            if ja == jb:
                return self.split_box(nd)
            mid = (ja + jb) // 2
            return [(i, zlo, zhi, 0, 0, ja, mid), (i, zlo, zhi, 0, 0, mid + 1, jb)]
        if self.is_fine(nd):
            return self.split_box(nd)
        if lev < 0:
            return [(i, zlo, zhi, 0, c, 0, 0) for c in range(len(self.tree(i)[0][0]))]
        return [(i, zlo, zhi, lev + 1, c, 0, 0) for c in self.tree(i)[2][lev][cell]]

    # -- bounds

    def bound(self, nodes):
        B = len(nodes)
        I = np.array([nd[0] for nd in nodes])
        lo, hi, t0, rt = self.box_geometry(nodes)
        seeds = self.Pl[None, :, :] - self.Ql[I][:, None, :]
        feas = _box_distance(lo, hi, seeds).min(axis=1) <= self.reach_i[I]
        V = seeds - t0[:, None, :]                               # p - image of q1
        ub = np.full(B, -math.inf)
        radial = np.array([nd[3] < 0 for nd in nodes])
        for sel in (np.flatnonzero(radial & feas), np.flatnonzero(~radial & feas)):
            if not sel.size:
                continue
            sub = [nodes[s] for s in sel]
            if self.d == 2 or radial[sel[0]]:
                cyl = self._polar(sub, I[sel], V[sel])
                ub[sel] = _backend.arc_bounds(*cyl, rt[sel], self.wp, self.wq, self.inv_s2)
            else:
                ub[sel] = self._spin_bound(sub, I[sel], V[sel], rt[sel])
        return ub

    def probe(self, nodes, ub):
        """Objective at the node centre: centre translation, cell axis, coarse spins."""
        out = np.array(ub, dtype=np.float64)
        if self.d == 3:
            # radial nodes: best over the coarsest direction cells
            for b, nd in enumerate(nodes):
                if nd[3] < 0:
                    cells = [nd[:3] + (0, c, 0, 0) for c in range(len(self.tree(nd[0])[0][0]))]
                    out[b] = self.probe(cells, np.zeros(len(cells))).max()
        sel = [b for b, nd in enumerate(nodes) if nd[3] >= 0 or self.d == 2]
        if not sel:
            return out
        sub = [nodes[b] for b in sel]
        I = np.array([nd[0] for nd in sub])
        _, _, t0, rt = self.box_geometry(sub)
        V = self.Pl[None, :, :] - self.Ql[I][:, None, :] - t0[:, None, :]
        if self.d == 2:
            mid = [(i, zlo, zhi, 0, 0, (ja + jb) // 2, (ja + jb) // 2)
                   for i, zlo, zhi, _, _, ja, jb in sub]
            cyl = self._polar(mid, I, V)
            out[sel] = _backend.arc_bounds(*cyl, np.zeros(len(sub)), self.wp, self.wq,
                                           self.inv_s2)
        else:
            out[sel] = self._spin_bound(sub, I, V, np.zeros(len(sub)), exact=True)
        return out

    def _polar(self, nodes, I, V):
        """Arguments of ``_backend.arc_bounds``: 2D arcs or the 3D radial bound."""
        B, nq = len(nodes), self.Ql.shape[0]
        zq = np.zeros((B, nq))
        zp = np.zeros(V.shape[:2])
        rp = np.sqrt(np.sum(V * V, axis=-1))
        if self.d == 3:
            return zp, rp, zp, zq, self.rq[I], zq, zq, np.zeros(B), np.full(B, 4.0 * math.pi)
        ja = np.array([nd[5] for nd in nodes], dtype=np.float64)
        jb = np.array([nd[6] for nd in nodes], dtype=np.float64)
        h = self.h[I]
        psi = np.arctan2(V[..., 1], V[..., 0])
        return zp, rp, psi, zq, self.rq[I], self.phiq[I], zq, ja * h, (jb - ja) * h

    def directions(self, nodes):
        """Axis and cell radius per 3D node (radius 0 on the fine level)."""
        U = np.tile([0.0, 0.0, 1.0], (len(nodes), 1))
        rad = np.zeros(len(nodes))
        for b, nd in enumerate(nodes):
            if nd[4] >= 0:
                Us, rads, _ = self.tree(nd[0])
                U[b] = Us[nd[3]][nd[4]]
                if nd[3] < len(Us) - 1:
                    rad[b] = rads[nd[3]][nd[4]]
        return U, rad

    def frames(self, I, U, trivial):
        """Pre-rotation taking v2 to U, plus an in-plane frame (e1, e2) of U."""
        M = minimal_rotation(self.v2[I], U)
        M[trivial] = np.eye(3)
        e1 = _perpendicular(U)
        return M, e1, np.cross(U, e1)

    def _spin_bound(self, nodes, I, V, rt, exact: bool = False):
        U, rad = self.directions(nodes)
        trivial = np.array([nd[4] < 0 for nd in nodes])
        M, e1, e2 = self.frames(I, U, trivial)
        Y = np.einsum("bqk,bjk->bqj", self.Qrel[I], M)          # q - q1 after pre-rotation
        hq = np.einsum("bqk,bk->bq", Y, U)
        rq = np.sqrt(np.maximum(np.sum(Y * Y, axis=-1) - hq * hq, 0.0))
        phiq = np.arctan2(np.einsum("bqk,bk->bq", Y, e2), np.einsum("bqk,bk->bq", Y, e1))
        ap = np.einsum("bpk,bk->bp", V, U)
        rp = np.sqrt(np.maximum(np.sum(V * V, axis=-1) - ap * ap, 0.0))
        psi = np.arctan2(np.einsum("bpk,bk->bp", V, e2), np.einsum("bpk,bk->bp", V, e1))
        # a rotation in a coarse cell is within rad of one about the cell axis,
        # whose spin is within half a (coarse) step of a spin sampled here
        J = self.J[I].copy()
        coarse = rad > 0.0
        J[coarse] = np.minimum(J[coarse], np.maximum(1, np.ceil(math.pi / rad[coarse])))
        hs = TWO_PI / J
        if exact:
            slack = np.zeros_like(self.rq[I])
        else:
            slack = (rt[:, None] + rad[:, None] * self.rq[I]
                     + np.where(coarse, 0.5 * hs, 0.0)[:, None] * self.rperp[I])
        return _backend.spin_bounds(ap, rp, psi, hq, rq, phiq, slack, J, hs,
                                    self.wp, self.wq, self.inv_s2)

    def evaluate(self, leaves):
        keys, I, cells, J, C = [], [], [], [], []
        for nd in leaves:
            i, z, _, lev, cell, ja, jb = nd
            if self.d == 3:
                ja, jb = 0, int(self.J[i]) - 1
            c = self.Ql[i] + np.array(z, dtype=np.float64) * self.step
            for j in range(ja, jb + 1):
                keys.append((i, z, cell, j))
                I.append(i)
                cells.append(nd)
                J.append(j)
                C.append(c)
        I, J, C = np.array(I), np.array(J, dtype=np.float64), np.array(C)
        theta = J * self.h[I]
        if self.d == 2:
            c, s = np.cos(theta), np.sin(theta)
            R = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
        else:
            U, _ = self.directions(cells)
            M, _, _ = self.frames(I, U, np.array([nd[4] < 0 for nd in cells]))
            R = axis_rotation(U, theta) @ M
        T = C - np.einsum("bij,bj->bi", R, self.Ql[I])
        return keys, R, T


def _finish(k, P, Q, motion: RigidMotion, search: _Search, value: float, params: dict):
    d2 = kernel_distance_sq_exact(k, P, motion(Q))
    return AlignmentResult(motion, d2, value, search.n_evaluated, search.n_nodes, params)


# ---------------------------------------------------------------- public searches

def _prepare(P: WeightedPointSet, Q: WeightedPointSet, eps):
    eps = _check_eps(eps)
    _check_same_dim(P.dim, Q.dim)
    if P.n == 0 or Q.n == 0:
        raise InvalidParameterError("alignment needs nonempty point sets")
    return eps


def best_translation(k: GaussianKernel, P: WeightedPointSet, Q: WeightedPointSet, eps: float,
                     *, max_work: float = DEFAULT_MAX_WORK) -> AlignmentResult:
    """Translation of Q that (approximately) minimizes D_K(P, Q + T).

    Candidates are the lattice ``(eps sigma / (2 sqrt(d))) Z^d`` restricted
    to translations within ``sigma sqrt(ln n^2)`` (plus lattice slack) of
    some difference p - q. The returned T is the best candidate, so its
    D_K^2 exceeds the optimum by at most ``0.43 eps W^2``.

    Args:
        k: kernel.
        P, Q: nonempty sets of equal dimension (any d >= 1).
        eps: tolerance in (0, 1).
        max_work: cap on kernel evaluations before BudgetExceededError.

    Returns:
        AlignmentResult whose motion is a pure translation.
    """
    eps = _prepare(P, Q, eps)
    d = P.dim
    n = max(P.n, Q.n)
    spacing = 0.5 * eps * k.sigma
    step = spacing / math.sqrt(d)
    lam = max(k.sigma * math.sqrt(math.log(n * n)), spacing)
    reach = lam + spacing  # Lambda plus twice the covering radius
    Pl, wp = _merge(P)
    Ql, wq = _merge(Q)
    search = _TranslationSearch(k, Pl, wp, Ql, wq, step, reach, max_work)
    value, key, (R, T) = search.run(search.roots())
    motion = RigidMotion.from_translation(T)
    params = {"eps": eps, "step": step, "radius": lam, "lattice_index": list(key[0])}
    return _finish(k, P, Q, motion, search, value, params)


def _rigid_search(k, P, Q, eps, max_work) -> "_RigidSearch":
    d, n = P.dim, max(P.n, Q.n)
    sigma = k.sigma
    # translation, direction (3D) and spin each displace a point of Q by at
    # most eps sigma / (4 d), so no point moves more than eps sigma / 4
    c_t = eps * sigma / (2 * d)
    eps_r = c_t
    step = c_t / math.sqrt(d)
    disp = 0.5 * c_t + 0.5 * eps_r * (d - 1)
    lam_t = sigma * math.sqrt(math.log(max(1.0 / eps, n * n)))
    lam_r = sigma * math.sqrt(math.log(1.0 / eps))
    Pl, wp = _merge(P)
    Ql, wq = _merge(Q)
    # one anchor suffices: some q lands within lam_t of P under the optimum,
    # so the anchor's image lies within lam_t + |q - q1| of P
    centroid = wq @ Ql / wq.sum()
    i1 = int(np.argmin(np.sum((Ql - centroid) ** 2, axis=1)))
    reach = np.full(Ql.shape[0], lam_t + c_t)
    reach[i1] += np.sqrt(np.sum((Ql - Ql[i1]) ** 2, axis=1)).max()
    search = _RigidSearch(k, Pl, wp, Ql, wq, step, reach, max_work, eps_r, lam_r, [i1])
    search.lam_t, search.eps_r, search.lam_r = lam_t, eps_r, lam_r
    # the grid costs at most 2 L disp W_P W_Q of D_K^2; half of what is left
    # of eps W_P W_Q may be given up in the objective
    grid_loss = 2.0 * lipschitz_bound(k) * disp
    search.gap = 0.5 * (eps - grid_loss) * float(wp.sum() * wq.sum())
    return search


def best_rigid_motion(k: GaussianKernel, P: WeightedPointSet, Q: WeightedPointSet, eps: float,
                      *, max_work: float = DEFAULT_MAX_WORK,
                      max_n: int | None = None) -> AlignmentResult:
    """Rotation plus translation of Q that (approximately) minimizes D_K, d in {2, 3}.

    Candidates: the anchor q1 (the point of Q nearest its centroid) is sent
    to a lattice point of spacing ``eps sigma / (2 d^{3/2})`` near P, then Q
    is rotated about that image over a rotation grid of tolerance
    ``eps sigma / (2 d)``. Every motion is matched by a candidate that moves
    no point of Q by more than ``eps sigma / 4``, which costs at most
    ``0.43 eps W^2`` of D_K^2. The branch and bound stops once no open
    node can beat the incumbent by more than the rest of the budget, so the
    result is within ``eps W^2`` of the optimum.

    Args:
        k: kernel.
        P, Q: nonempty sets in R^2 or R^3.
        eps: tolerance in (0, 1).
        max_work: cap on kernel evaluations.
        max_n: size guard (default 60 in 2D, 25 in 3D).

    Returns:
        AlignmentResult; ``motion`` is anchored at the chosen q1.

    Raises:
        UnsupportedDimensionError: d not in {2, 3}.
        BudgetExceededError: input above the size guard or work budget.
    """
    eps = _prepare(P, Q, eps)
    d = P.dim
    if d not in (2, 3):
        raise UnsupportedDimensionError(f"rigid alignment supports d in {{2, 3}}, got {d}")
    n = max(P.n, Q.n)
    limit = MAX_RIGID_N[d] if max_n is None else int(max_n)
    if n > limit:
        raise BudgetExceededError(
            f"rigid search on n={n} points exceeds the guard n <= {limit} for d={d}; "
            "use the coreset variant")
    search = _rigid_search(k, P, Q, eps, max_work)
    value, key, (R, T) = search.run(search.roots())
    i, z, did, j = key
    q1 = search.Ql[i]
    motion = RigidMotion(np.array(z, dtype=np.float64) * search.step, R, q1)
    params = {"eps": eps, "step": search.step, "radius": search.lam_t, "eps_r": search.eps_r,
              "lambda_r": search.lam_r, "gap": search.gap,
              "anchor_index": int(i), "lattice_index": list(z), "direction": int(did),
              "angle_index": int(j)}
    return _finish(k, P, Q, motion, search, value, params)


def _coresets(P, Q, eps, delta, seed, size):
    if size is None:
        size = coreset_size_random(eps / 4.0, delta, P.dim)
    size = int(size)
    if size < 1:
        raise InvalidParameterError(f"coreset size must be >= 1, got {size}")
    Pc = P if size >= P.n else coreset_random(P, size, seed, stream="coreset_p").subset
    Qc = Q if size >= Q.n else coreset_random(Q, size, seed, stream="coreset_q").subset
    return Pc, Qc, size


def _reevaluate(k, P, Q, res: AlignmentResult, Pc, Qc, size) -> AlignmentResult:
    if Pc is P and Qc is Q:
        params = dict(res.params, coreset_size=size, coreset_used=False)
        return AlignmentResult(res.motion, res.d2, res.objective, res.n_evaluated, res.n_nodes,
                               params)
    value = alignment_objective(k, P, Q, res.motion)
    d2 = kernel_distance_sq_exact(k, P, res.motion(Q))
    params = dict(res.params, coreset_size=size, coreset_used=True,
                  coreset_n=(Pc.n, Qc.n))
    return AlignmentResult(res.motion, d2, value, res.n_evaluated, res.n_nodes, params)


def best_translation_coreset(k: GaussianKernel, P: WeightedPointSet, Q: WeightedPointSet,
                             eps: float, delta: float, seed: int, *, size: int | None = None,
                             max_work: float = DEFAULT_MAX_WORK) -> AlignmentResult:
    """best_translation on random coresets, scored on the full sets.

    Args:
        size: coreset size per side; defaults to the random-sample bound
            for eps/4. A side no larger than the size is used as is.
    """
    eps = _prepare(P, Q, eps)
    Pc, Qc, size = _coresets(P, Q, eps, delta, seed, size)
    res = best_translation(k, Pc, Qc, eps, max_work=max_work)
    return _reevaluate(k, P, Q, res, Pc, Qc, size)


def best_rigid_motion_coreset(k: GaussianKernel, P: WeightedPointSet, Q: WeightedPointSet,
                              eps: float, delta: float, seed: int, *, size: int | None = None,
                              max_work: float = DEFAULT_MAX_WORK,
                              max_n: int | None = None) -> AlignmentResult:
    """best_rigid_motion on random coresets, scored on the full sets."""
    eps = _prepare(P, Q, eps)
    if P.dim not in (2, 3):
        raise UnsupportedDimensionError(f"rigid alignment supports d in {{2, 3}}, got {P.dim}")
    Pc, Qc, size = _coresets(P, Q, eps, delta, seed, size)
    res = best_rigid_motion(k, Pc, Qc, eps, max_work=max_work, max_n=max_n)
    return _reevaluate(k, P, Q, res, Pc, Qc, size)


def enumerate_candidates(search: _Search):
    """Every candidate of a search as (keys, R, T). For small test instances."""
    leaves, stack = [], search.roots()
    while stack:
        nd = stack.pop()
        if search.is_leaf(nd):
            leaves.append(nd)
        else:
            stack.extend(search.expand(nd))
    lo, hi, _, _ = search.box_geometry(leaves)
    if isinstance(search, _TranslationSearch):
        seeds = np.broadcast_to(search.seeds, (len(leaves),) + search.seeds.shape)
    else:
        I = np.array([nd[0] for nd in leaves])
        seeds = search.Pl[None, :, :] - search.Ql[I][:, None, :]
    feas = _box_distance(lo, hi, seeds).min(axis=1) <= (
        search.reach if isinstance(search, _TranslationSearch) else search.reach_i[I])
    return search.evaluate([nd for nd, f in zip(leaves, feas) if f])
