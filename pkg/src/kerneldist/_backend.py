"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the NumPy
fallback. Set ``KERNELDIST_BACKEND=python`` to force the fallback.
Thread count comes from ``set_num_threads`` or ``KERNELDIST_THREADS``
(default: all cores).
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels


def _default_name() -> str:
    forced = os.environ.get("KERNELDIST_BACKEND", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(f"KERNELDIST_BACKEND={forced!r} is not available")
        return forced
    return "compiled" if "compiled" in _BACKENDS else "python"


_active_name = _default_name()
_active = _BACKENDS[_active_name]


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def backend_name() -> str:
    return _active_name


def use_backend(name: str) -> None:
    """Switch the process-wide backend ('compiled' or 'python')."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    n = _active.get_num_threads()
    _active_name = name
    _active = _BACKENDS[name]
    _active.set_num_threads(n)


def default_threads() -> int:
    env = os.environ.get("KERNELDIST_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def set_num_threads(n: int | None) -> None:
    for mod in _BACKENDS.values():
        mod.set_num_threads(default_threads() if n is None else int(n))


def get_num_threads() -> int:
    return _active.get_num_threads()


set_num_threads(None)


def _c2(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def row_sums(X, Y, wy, inv_s2: float) -> np.ndarray:
    return _active.row_sums(_c2(X), _c2(Y), _c2(wy), float(inv_s2))


def cross_sum(X, wx, Y, wy, inv_s2: float) -> float:
    """sum_i sum_j wx_i wy_j exp(-|x_i - y_j|^2 inv_s2)."""
    rows = row_sums(X, Y, wy, inv_s2)
    return float(np.sum(np.asarray(wx, dtype=np.float64) * rows))


def self_sum(X, w, inv_s2: float) -> float:
    """cross_sum(X, w, X, w) computed over the upper triangle."""
    w = _c2(w)
    rows = _active.upper_row_sums(_c2(X), w, float(inv_s2))
    return float(np.sum(w * w) + 2.0 * np.sum(w * rows))


def motion_batch(P, wp, Q, wq, R, T, inv_s2: float) -> np.ndarray:
    return _active.motion_batch(_c2(P), _c2(wp), _c2(Q), _c2(wq), _c2(R), _c2(T),
                                float(inv_s2))


def build_tree(X):
    return _active.build_tree(_c2(X))


def wspd_pairs(lo, hi, left, right, alpha: float, prune: float):
    return _active.wspd_pairs(_c2(lo), _c2(hi), np.ascontiguousarray(left, dtype=np.intp),
                              np.ascontiguousarray(right, dtype=np.intp),
                              float(alpha), float(prune))


def wspd_sums(lo, hi, left, right, alpha: float, prune: float, rep, mp, mq, inv_s2: float):
    return _active.wspd_sums(_c2(lo), _c2(hi), np.ascontiguousarray(left, dtype=np.intp),
                             np.ascontiguousarray(right, dtype=np.intp), float(alpha),
                             float(prune), _c2(rep), _c2(mp), _c2(mq), float(inv_s2))


def arc_bounds(ap, rp, psi, hq, rq, phiq, slack, theta0, length, rt, wp, wq, inv_s2: float):
    a = [_c2(x) for x in (ap, rp, psi, hq, rq, phiq, slack, theta0, length, rt, wp, wq)]
    return _active.arc_bounds(*a, float(inv_s2))


def translation_bounds(S, sw, lo, hi, reach: float, inv_s2: float):
    return _active.translation_bounds(_c2(S), _c2(sw), _c2(lo), _c2(hi), float(reach),
                                      float(inv_s2))


def spin_bounds(ap, rp, psi, hq, rq, phiq, slack, nspin, hstep, wp, wq, inv_s2: float):
    a = [_c2(x) for x in (ap, rp, psi, hq, rq, phiq, slack)]
    return _active.spin_bounds(*a, np.ascontiguousarray(nspin, dtype=np.intp), _c2(hstep),
                               _c2(wp), _c2(wq), float(inv_s2))
