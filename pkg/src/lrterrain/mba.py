"""Multilevel B-spline approximation update pass.

One sweep distributes current point residuals into coefficient corrections:
each point proposes the correction that would make the surface interpolate
it alone, and each B-spline blends proposals from the points in its support
with weights proportional to the (scaled) basis value there.  No linear
system is solved; repeated sweeps converge geometrically on fixed data.
"""
from __future__ import annotations

import numpy as np

from .evaluate import basis_matrix_on_element, eval_cache, evaluate, _locate
from .mesh import LRSurface

__all__ = ["mba_update", "mba_fit"]


def mba_update(surface: LRSurface, points: np.ndarray,
               residuals: np.ndarray | None = None, tau: float = 0.0) -> dict:
    """Apply one correction sweep in place.

    ``residuals`` are z - F per point; recomputed when omitted.  B-splines
    whose support holds no point with |residual| > ``tau`` are left alone,
    as are B-splines with no data support at all.  Returns sweep stats.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] < 3 or len(pts) == 0:
        raise ValueError("points must be a nonempty (n, 3) array")
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    if residuals is None:
        residuals = z - evaluate(surface, x, y)
    r = np.asarray(residuals, dtype=float)
    cache = eval_cache(surface)
    eid = _locate(cache, x, y)
    order = np.argsort(eid, kind="stable")
    sorted_eid = eid[order]
    bounds = np.searchsorted(sorted_eid, np.arange(len(cache.elements) + 1))
    L = len(surface.bsplines)
    num = np.zeros(L)
    den = np.zeros(L)
    max_abs_r = np.zeros(L)
    for e in np.unique(sorted_eid):
        sel = order[bounds[e]:bounds[e + 1]]
        res = cache.residents[e]
        Be = basis_matrix_on_element(cache, e, x[sel], y[sel])
        B2 = Be * Be
        D = B2.sum(axis=1)           # per-point normalization
        ok = D > 0
        if not ok.all():
            B2 = B2[ok]
            Be = Be[ok]
            D = D[ok]
            sel = sel[ok]
        num[res] += ((Be * B2) * (r[sel] / D)[:, None]).sum(axis=0)
        den[res] += B2.sum(axis=0)
        if len(sel):
            np.maximum.at(max_abs_r, res,
                          np.full(len(res), np.abs(r[sel]).max()))
    active = (den > 0) & (max_abs_r > tau)
    delta = np.zeros(L)
    delta[active] = num[active] / den[active]
    surface.coeffs = surface.coeffs + delta
    return {
        "n_updated": int(active.sum()),
        "max_delta": float(np.abs(delta).max()) if L else 0.0,
    }


def mba_fit(surface: LRSurface, points: np.ndarray, sweeps: int = 5,
            tau: float = 0.0) -> list[dict]:
    """Run several sweeps, re-evaluating residuals each time."""
    stats = []
    for _ in range(sweeps):
        stats.append(mba_update(surface, points, tau=tau))
    return stats
