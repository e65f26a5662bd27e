"""Surface evaluation, derivatives, and distance fields.

Each B-spline restricted to one element is a bivariate polynomial; we cache
its monomial coefficients in element-local coordinates and evaluate whole
point batches per element with einsum.  The cache keys on the surface's
version counter, so refinement invalidates it automatically.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mesh import LRSurface, residents_of

__all__ = [
    "evaluate",
    "partition_of_unity",
    "distance_field",
    "element_accuracy",
    "eval_cache",
    "basis_matrix",
    "basis_matrix_on_element",
]


@lru_cache(maxsize=200_000)
def _piece_poly(knots: tuple[float, ...], degree: int, lo: float, hi: float) -> tuple[float, ...]:
    """Monomial coefficients of one univariate B-spline on [lo, hi].

    Coordinates are local: t = (x - lo) / (hi - lo) in [0, 1].  Returned
    low-order first, length degree + 1.  The interval must lie inside one
    knot span (it is an element edge projection, so it always does).
    """
    mid = 0.5 * (lo + hi)
    w = hi - lo
    if degree == 0:
        return (1.0,) if knots[0] <= mid < knots[1] else (0.0,)
    # Cox-de Boor on monomial coefficient arrays in the local coordinate
    n = len(knots) - 1
    polys = []
    for i in range(n):
        inside = knots[i] <= mid < knots[i + 1]
        polys.append(np.array([1.0 if inside else 0.0]))
    for d in range(1, degree + 1):
        new = []
        for i in range(n - d):
            # term1: (x - knots[i]) / (knots[i+d] - knots[i]) * polys[i]
            acc = np.zeros(d + 1)
            den1 = knots[i + d] - knots[i]
            if den1 > 0 and polys[i].any():
                # x = lo + w t  ->  (x - k)/den = (w t + (lo - k)) / den
                a = w / den1
                b = (lo - knots[i]) / den1
                p = polys[i]
                acc[1:len(p) + 1] += a * p
                acc[:len(p)] += b * p
            den2 = knots[i + d + 1] - knots[i + 1]
            if den2 > 0 and polys[i + 1].any():
                a = -w / den2
                b = (knots[i + d + 1] - lo) / den2
                p = polys[i + 1]
                acc[1:len(p) + 1] += a * p
                acc[:len(p)] += b * p
            new.append(acc)
        polys = new
    return tuple(float(c) for c in polys[0])


@dataclass
class _EvalCache:
    version: int
    elements: list
    residents: list
    cell_map: np.ndarray
    uc: np.ndarray
    vc: np.ndarray
    tensors: list   # per element: (n_res, du+1, dv+1) scaled monomial tensors


_cache_store: dict[int, tuple] = {}


def eval_cache(surface: LRSurface) -> _EvalCache:
    # keyed by id() with a weakref guard: ids of collected surfaces get
    # recycled by CPython, so the ref must still point at this object
    key = id(surface)
    hit = _cache_store.get(key)
    if hit is not None:
        ref, entry = hit
        if ref() is surface and entry.version == surface.version:
            return entry
    du, dv = surface.degrees
    elements, residents, cell_map, uc, vc = residents_of(surface)
    tensors = []
    for el, res in zip(elements, residents):
        T = np.empty((len(res), du + 1, dv + 1))
        for k, i in enumerate(res):
            b = surface.bsplines[i]
            pu = _piece_poly(b.ku, du, el.u_lo, el.u_hi)
            pv = _piece_poly(b.kv, dv, el.v_lo, el.v_hi)
            T[k] = b.scaling * np.outer(pu, pv)
        tensors.append(T)
    entry = _EvalCache(surface.version, elements, residents, cell_map, uc, vc, tensors)
    if len(_cache_store) > 64:
        _cache_store.clear()
    _cache_store[key] = (weakref.ref(surface), entry)
    return entry


def _locate(cache: _EvalCache, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Element index per point; raises on points outside the domain."""
    uc, vc = cache.uc, cache.vc
    eps_u = 1e-9 * (uc[-1] - uc[0])
    eps_v = 1e-9 * (vc[-1] - vc[0])
    bad = (x < uc[0] - eps_u) | (x > uc[-1] + eps_u) | \
          (y < vc[0] - eps_v) | (y > vc[-1] + eps_v)
    if bad.any():
        k = int(np.argmax(bad))
        raise ValueError(
            f"point ({x[k]}, {y[k]}) outside surface domain "
            f"[{uc[0]}, {uc[-1]}] x [{vc[0]}, {vc[-1]}]")
    iu = np.clip(np.searchsorted(uc, x, side="right") - 1, 0, len(uc) - 2)
    iv = np.clip(np.searchsorted(vc, y, side="right") - 1, 0, len(vc) - 2)
    return cache.cell_map[iu, iv]


def _powers(t: np.ndarray, d: int) -> np.ndarray:
    out = np.empty((len(t), d + 1))
    out[:, 0] = 1.0
    for k in range(1, d + 1):
        out[:, k] = out[:, k - 1] * t
    return out


def _dpowers(t: np.ndarray, d: int, order: int, scale: float) -> np.ndarray:
    """Rows of d^order/dx^order of [1, t, t^2, ...] with t = (x-lo)*scale."""
    out = np.zeros((len(t), d + 1))
    for k in range(order, d + 1):
        f = 1.0
        for m in range(order):
            f *= (k - m)
        out[:, k] = f * (scale ** order) * t ** (k - order)
    return out


def evaluate(surface: LRSurface, x, y, order: int = 0,
             coeffs: np.ndarray | None = None) -> np.ndarray:
    """Evaluate the surface (and optionally derivatives) at points.

    order 0 returns shape (n,); order 1 returns (n, 3) columns F, Fu, Fv;
    order 2 returns (n, 6) columns F, Fu, Fv, Fuu, Fuv, Fvv.  Points outside
    the domain raise ValueError.  ``coeffs`` overrides the stored
    coefficients without touching the surface.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError("x and y must have the same shape")
    cache = eval_cache(surface)
    eid = _locate(cache, x, y)
    ncols = {0: 1, 1: 3, 2: 6}[order]
    out = np.zeros((len(x), ncols))
    order_idx = np.argsort(eid, kind="stable")
    sorted_eid = eid[order_idx]
    bounds = np.searchsorted(sorted_eid, np.arange(len(cache.elements) + 1))
    du, dv = surface.degrees
    if coeffs is None:
        coeffs = surface.coeffs
    for e in np.unique(sorted_eid):
        sel = order_idx[bounds[e]:bounds[e + 1]]
        el = cache.elements[e]
        wu = el.u_hi - el.u_lo
        wv = el.v_hi - el.v_lo
        tu = (x[sel] - el.u_lo) / wu
        tv = (y[sel] - el.v_lo) / wv
        res = cache.residents[e]
        # contract coefficients into one polynomial tensor for the element
        P = np.tensordot(coeffs[res], cache.tensors[e], axes=(0, 0))
        PU0 = _powers(tu, du)
        PV0 = _powers(tv, dv)
        out[sel, 0] = np.einsum("pj,jk,pk->p", PU0, P, PV0)
        if order >= 1:
            PU1 = _dpowers(tu, du, 1, 1.0 / wu)
            PV1 = _dpowers(tv, dv, 1, 1.0 / wv)
            out[sel, 1] = np.einsum("pj,jk,pk->p", PU1, P, PV0)
            out[sel, 2] = np.einsum("pj,jk,pk->p", PU0, P, PV1)
        if order >= 2:
            PU2 = _dpowers(tu, du, 2, 1.0 / wu)
            PV2 = _dpowers(tv, dv, 2, 1.0 / wv)
            out[sel, 3] = np.einsum("pj,jk,pk->p", PU2, P, PV0)
            out[sel, 4] = np.einsum("pj,jk,pk->p", PU1, P, PV1)
            out[sel, 5] = np.einsum("pj,jk,pk->p", PU0, P, PV2)
    if order == 0:
        return out[:, 0]
    return out


def partition_of_unity(surface: LRSurface, x, y) -> np.ndarray:
    """Sum of scaled basis values at the points (1 everywhere when valid)."""
    return evaluate(surface, x, y, coeffs=np.ones(len(surface.bsplines)))


def basis_matrix_on_element(cache: _EvalCache, e: int, x: np.ndarray,
                            y: np.ndarray) -> np.ndarray:
    """Scaled basis values, shape (n_points, n_residents), for element e."""
    el = cache.elements[e]
    tu = (x - el.u_lo) / (el.u_hi - el.u_lo)
    tv = (y - el.v_lo) / (el.v_hi - el.v_lo)
    T = cache.tensors[e]
    PU = _powers(tu, T.shape[1] - 1)
    PV = _powers(tv, T.shape[2] - 1)
    return np.einsum("pj,ijk,pk->pi", PU, T, PV)


def basis_matrix(surface: LRSurface, x, y):
    """Global sparse collocation matrix B with B[p, i] = s_i N_i(x_p, y_p).

    Returns (B in CSR, element_id per point).
    """
    from scipy import sparse

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    cache = eval_cache(surface)
    eid = _locate(cache, x, y)
    order_idx = np.argsort(eid, kind="stable")
    sorted_eid = eid[order_idx]
    bounds = np.searchsorted(sorted_eid, np.arange(len(cache.elements) + 1))
    rows, cols, vals = [], [], []
    for e in np.unique(sorted_eid):
        sel = order_idx[bounds[e]:bounds[e + 1]]
        res = cache.residents[e]
        Be = basis_matrix_on_element(cache, e, x[sel], y[sel])
        rows.append(np.repeat(sel, len(res)))
        cols.append(np.tile(res, len(sel)))
        vals.append(Be.ravel())
    n = len(x)
    m = len(surface.bsplines)
    if not rows:
        return sparse.csr_matrix((n, m)), eid
    B = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, m)).tocsr()
    return B, eid


def distance_field(surface: LRSurface, points: np.ndarray, tau: float) -> dict:
    """Signed vertical residuals of points against the surface.

    ``points`` is (n, 3) columns x, y, z.  Residual r = z - F(x, y), so
    points above the surface are positive.  Points outside the domain get
    element_id -1 and NaN residual; they are reported, never dropped.

    Returns dict with residual (n,), element_id (n,), status int8 (n,)
    where 0 = within tolerance, 1 = above, -1 = below, 2 = outside domain.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise ValueError("points must be (n, 3)")
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    cache = eval_cache(surface)
    uc, vc = cache.uc, cache.vc
    eps_u = 1e-9 * (uc[-1] - uc[0])
    eps_v = 1e-9 * (vc[-1] - vc[0])
    inside = (x >= uc[0] - eps_u) & (x <= uc[-1] + eps_u) & \
             (y >= vc[0] - eps_v) & (y <= vc[-1] + eps_v)
    residual = np.full(len(pts), np.nan)
    element_id = np.full(len(pts), -1, dtype=np.int64)
    status = np.full(len(pts), 2, dtype=np.int8)
    if inside.any():
        xi, yi = x[inside], y[inside]
        residual[inside] = z[inside] - evaluate(surface, xi, yi)
        element_id[inside] = _locate(cache, xi, yi)
        r = residual[inside]
        s = np.zeros(len(r), dtype=np.int8)
        s[r > tau] = 1
        s[r < -tau] = -1
        status[inside] = s
    return {"residual": residual, "element_id": element_id, "status": status}


def element_accuracy(surface: LRSurface, field: dict, tau: float) -> dict:
    """Aggregate a distance field per element.

    Returns dict of arrays indexed by element: n_points, max_abs, mean_abs,
    n_out (count with |r| > tau).
    """
    cache = eval_cache(surface)
    ne = len(cache.elements)
    eid = field["element_id"]
    r = field["residual"]
    ok = eid >= 0
    e = eid[ok]
    a = np.abs(r[ok])
    n_points = np.bincount(e, minlength=ne)
    max_abs = np.zeros(ne)
    np.maximum.at(max_abs, e, a)
    sum_abs = np.bincount(e, weights=a, minlength=ne)
    n_out = np.bincount(e[a > tau], minlength=ne)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_abs = np.where(n_points > 0, sum_abs / np.maximum(n_points, 1), 0.0)
    return {"n_points": n_points, "max_abs": max_abs,
            "mean_abs": mean_abs, "n_out": n_out}
