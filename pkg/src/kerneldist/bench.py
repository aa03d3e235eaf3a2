"""Benchmark suites behind ``kerneldist bench``.

Each suite returns a list of row dicts with a fixed column order; the CLI
writes them as CSV. Instances come from the ``bench`` random stream, so a
seed fixes every input (timings of course vary).

Suites:
    scaling      exact against wspd, ifgt and rff as n grows.
    backends     compiled against pure-Python kernels.
    calibration  kernel discrepancy of random coresets at the pinned size.
"""
from __future__ import annotations

import math
import time

import numpy as np

from . import _backend
from .core import GaussianKernel, WeightedPointSet, kernel_distance_sq_exact
from .coreset import coreset_random, coreset_size_random, kernel_discrepancy
from .errors import InvalidParameterError
from .features import (draw_frequencies, embed, kernel_distance_features, rff_dimension,
                       taylor_basis_for)
from .rng import generator
from .wspd import build_split_tree, prune_radius, wspd_alpha, wspd_estimate

SCALING_SIZES = (1000, 2000, 5000, 10000, 20000)
FAMILIES = {"spread": 0, "compact": 1}
# methods run on each instance family; ifgt needs a compact support
FAMILY_METHODS = {"spread": ("exact", "wspd"), "compact": ("exact", "wspd", "ifgt", "rff")}

SCALING_COLUMNS = ["suite", "family", "method", "n", "d", "eps", "seconds", "d2",
                   "abs_err_over_w2", "speedup", "certificate"]
BACKEND_COLUMNS = ["suite", "kernel", "n", "backend", "seconds", "speedup", "max_abs_diff"]
CALIBRATION_COLUMNS = ["suite", "eps", "delta", "d", "n", "size", "trials", "frac_within",
                       "q50", "q90", "max"]


def instance(family: str, n: int, d: int, seed: int, sigma: float = 1.0):
    """Two n-point unit-mass sets from the ``bench`` stream.

    ``spread``: uniform in a cube of side sigma (n/2)^(1/d), i.e. about two
    points per sigma^d. ``compact``: uniform in a ball of radius sigma/2.
    """
    if family not in FAMILIES:
        raise InvalidParameterError(f"unknown instance family {family!r}")
    rng = generator(seed, "bench", FAMILIES[family], n, d)
    if family == "spread":
        side = sigma * (n / 2.0) ** (1.0 / d)
        X = rng.uniform(0.0, side, (2 * n, d))
    else:
        g = rng.standard_normal((2 * n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        X = 0.5 * sigma * g * rng.random((2 * n, 1)) ** (1.0 / d)
    return WeightedPointSet(X[:n]), WeightedPointSet(X[n:])


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _estimate(method: str, k, P, Q, eps: float, delta: float, seed: int):
    """(D_K^2 estimate, certificate string) for one method."""
    if method == "exact":
        return kernel_distance_sq_exact(k, P, Q), ""
    if method == "wspd":
        est = wspd_estimate(k, P, Q, eps)
        return est.d2, f"pairs={est.n_pairs}"
    if method == "ifgt":
        basis = taylor_basis_for(k, P, Q, eps)
        return kernel_distance_features(embed(basis, P), embed(basis, Q)), f"tau={basis.tau}"
    if method == "rff":
        rho = rff_dimension(eps, delta, P.n + Q.n)
        basis = draw_frequencies(k.sigma, P.dim, rho, seed)
        return kernel_distance_features(embed(basis, P), embed(basis, Q)), f"rho={rho}"
    raise InvalidParameterError(f"unknown method {method!r}")


def scaling(sizes=SCALING_SIZES, seed: int = 0, d: int = 2, eps: float = 0.1,
            delta: float = 0.1, families=tuple(FAMILIES), methods=None) -> list[dict]:
    """Time every method against exact on both instance families."""
    k = GaussianKernel(1.0)
    rows = []
    for family in families:
        for n in sizes:
            P, Q = instance(family, int(n), d, seed)
            W2 = max(P.total_mass, Q.total_mass) ** 2
            exact_val = exact_time = None
            for method in FAMILY_METHODS[family]:
                if methods is not None and method != "exact" and method not in methods:
                    continue
                (val, cert), secs = _timed(lambda: _estimate(method, k, P, Q, eps, delta, seed))
                if method == "exact":
                    exact_val, exact_time = val, secs
                rows.append({
                    "suite": "scaling", "family": family, "method": method, "n": int(n), "d": d,
                    "eps": eps, "seconds": secs, "d2": val,
                    "abs_err_over_w2": abs(val - exact_val) / W2,
                    "speedup": exact_time / secs if secs > 0 else math.inf,
                    "certificate": cert})
    return rows


def _backend_cases(n: int, rng):
    X = rng.uniform(0.0, 4.0, (n, 2))
    Y = rng.uniform(0.0, 4.0, (n, 2))
    w = rng.uniform(0.5, 1.5, n)
    tree = build_split_tree(np.vstack([X, Y]))
    m = tree.n_locations
    mp = np.bincount(tree.inverse[:n], weights=w, minlength=m)
    mq = np.bincount(tree.inverse[n:], minlength=m).astype(np.float64)
    k = GaussianKernel(1.0)
    rep = tree.locations[tree.rep]
    B = 64
    th = rng.uniform(0.0, 2.0 * math.pi, B)
    R = np.stack([np.stack([np.cos(th), -np.sin(th)], -1), np.stack([np.sin(th), np.cos(th)], -1)],
                 -2)
    T = rng.uniform(-1.0, 1.0, (B, 2))
    small = min(n, 200)
    return {
        "row_sums": lambda: _backend.row_sums(X, Y, w, 1.0),
        "self_sum": lambda: _backend.self_sum(X, w, 1.0),
        "wspd_sums": lambda: _backend.wspd_sums(
            tree.lo, tree.hi, tree.left, tree.right, wspd_alpha(0.2), prune_radius(k, 0.2), rep,
            tree.node_sums(mp), tree.node_sums(mq), 1.0)[:4],
        "motion_batch": lambda: _backend.motion_batch(X[:small], w[:small], Y[:small],
                                                      w[:small], R, T, 1.0),
    }


def backends(sizes=(500, 1000), seed: int = 0, repeats: int = 3) -> list[dict]:
    """Best-of-``repeats`` timing of each hot kernel under both backends."""
    names = _backend.available_backends()
    before = _backend.backend_name()
    rows = []
    try:
        for n in sizes:
            cases = _backend_cases(int(n), generator(seed, "bench", 99, int(n)))
            for kernel, fn in cases.items():
                times, values = {}, {}
                for b in names:
                    _backend.use_backend(b)
                    best = math.inf
                    for _ in range(repeats):
                        out, secs = _timed(fn)
                        best = min(best, secs)
                    times[b], values[b] = best, np.atleast_1d(np.asarray(out, dtype=np.float64))
                ref = values.get("python", next(iter(values.values())))
                for b in names:
                    rows.append({
                        "suite": "backends", "kernel": kernel, "n": int(n), "backend": b,
                        "seconds": times[b], "speedup": times.get("python", times[b]) / times[b],
                        "max_abs_diff": float(np.max(np.abs(values[b] - ref)))})
    finally:
        _backend.use_backend(before)
    return rows


def calibration(seed: int = 0, trials: int = 100, n: int = 1000, eps: float = 0.2,
                delta: float = 0.1, d: int = 2) -> list[dict]:
    """Kernel discrepancy of coreset_random at coreset_size_random(eps, delta, d).

    Parents are n uniform points in a cube of side 4 sigma; each trial draws
    a fresh parent and coreset.
    """
    k = GaussianKernel(1.0)
    size = coreset_size_random(eps, delta, d)
    vals = []
    for t in range(trials):
        rng = generator(seed, "bench", 7, t)
        P = WeightedPointSet(rng.uniform(0.0, 4.0, (n, d)))
        C = coreset_random(P, size, seed + t)
        vals.append(kernel_discrepancy(k, P, C, eps=eps))
    v = np.array(vals)
    return [{"suite": "calibration", "eps": eps, "delta": delta, "d": d, "n": n, "size": size,
             "trials": trials, "frac_within": float(np.mean(v <= eps)),
             "q50": float(np.quantile(v, 0.5)), "q90": float(np.quantile(v, 0.9)),
             "max": float(v.max())}]


SUITES = {
    "scaling": (scaling, SCALING_COLUMNS),
    "backends": (backends, BACKEND_COLUMNS),
    "calibration": (calibration, CALIBRATION_COLUMNS),
}


def run_suite(name: str, sizes=None, seed: int = 0) -> tuple[list[str], list[dict]]:
    """Run a suite by name; returns (columns, rows)."""
    if not name or name not in SUITES:
        raise InvalidParameterError(
            f"unknown benchmark suite {name!r}; choose from {sorted(SUITES)}")
    fn, cols = SUITES[name]
    if name == "calibration":
        rows = fn(seed=seed) if sizes is None else fn(seed=seed, n=int(sizes[0]))
    else:
        rows = fn(seed=seed) if sizes is None else fn(sizes=tuple(sizes), seed=seed)
    return cols, rows
