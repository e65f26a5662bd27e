"""Cross-survey consistency testing and point removal.

Overlapping surveys are compared pairwise per element of a rough reference
surface, in descending priority order.  A candidate sample is judged
against each already-accepted sample through residual statistics relative
to the reference; failures remove the candidate's points at the finest
sub-domain granularity the test reached, never whole surveys.

The t-statistic and its confidence limit are computed and reported but do
not decide on their own: with dense, low-noise samples the test statistic
grows without bound even when the practical disagreement is millimeters,
so threshold-relative criteria carry the verdict and the t-value serves as
an advisory signal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evaluate import distance_field, evaluate
from .mesh import LRSurface

__all__ = [
    "Survey",
    "SampleStats",
    "DeconflictConfig",
    "students_t_quantile",
    "two_sample_t",
    "confidence_interval",
    "combined_std",
    "element_consistency",
    "pairwise_element_test",
    "deconflict",
    "default_scores",
    "CONSISTENT",
    "NOT_CONSISTENT",
    "INDETERMINATE",
]

CONSISTENT = "consistent"
NOT_CONSISTENT = "not-consistent"
INDETERMINATE = "indeterminate"


@dataclass
class Survey:
    """A point cloud with priority metadata."""

    points: np.ndarray
    name: str = ""
    score: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] < 3:
            raise ValueError(f"survey {self.name!r}: points must be (n, 3)")


@dataclass(frozen=True)
class SampleStats:
    """Residual statistics of one survey restricted to one region."""

    n: int
    mean: float
    std: float | None          # None when n < 2
    lo: float
    hi: float
    bbox: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax

    @classmethod
    def from_data(cls, xy: np.ndarray, residuals: np.ndarray) -> "SampleStats":
        r = np.asarray(residuals, dtype=float)
        if len(r) == 0:
            raise ValueError("empty sample")
        xy = np.asarray(xy, dtype=float)
        std = float(np.std(r, ddof=1)) if len(r) >= 2 else None
        return cls(
            n=len(r), mean=float(r.mean()), std=std,
            lo=float(r.min()), hi=float(r.max()),
            bbox=(float(xy[:, 0].min()), float(xy[:, 0].max()),
                  float(xy[:, 1].min()), float(xy[:, 1].max())),
        )

    @property
    def size(self) -> float:
        return (self.bbox[1] - self.bbox[0]) * (self.bbox[3] - self.bbox[2])


def combined_std(a: SampleStats, b: SampleStats) -> float | None:
    """Sample standard deviation of the union, from summary statistics."""
    n = a.n + b.n
    if n < 2:
        return None
    mean = (a.n * a.mean + b.n * b.mean) / n
    m2 = 0.0
    for s in (a, b):
        if s.std is not None:
            m2 += (s.n - 1) * s.std ** 2
        m2 += s.n * (s.mean - mean) ** 2
    return math.sqrt(m2 / (n - 1))


def students_t_quantile(alpha: float, df: float) -> float:
    """Two-sided upper quantile: P(|T| > q) = alpha for T ~ t(df).

    df = inf gives the normal quantile (1.95996 at alpha = 0.05).
    """
    from scipy import stats

    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if math.isinf(df):
        return float(stats.norm.ppf(1 - alpha / 2))
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    return float(stats.t.ppf(1 - alpha / 2, df))


def two_sample_t(a: SampleStats, b: SampleStats) -> dict:
    """T statistic with both degree-of-freedom conventions.

    ``df_pooled`` assumes equal variances (N1 + N2 - 1); ``df_welch`` is
    the unequal-variance approximation.  Requires both stds defined.
    """
    if a.std is None or b.std is None:
        raise ValueError("two-sample test needs at least 2 points per sample")
    va = a.std ** 2 / a.n
    vb = b.std ** 2 / b.n
    denom = math.sqrt(va + vb)
    t = (a.mean - b.mean) / denom if denom > 0 else math.inf
    df_pooled = a.n + b.n - 1
    if va + vb > 0 and a.n > 1 and b.n > 1:
        df_welch = (va + vb) ** 2 / (va ** 2 / (a.n - 1) + vb ** 2 / (b.n - 1))
    else:
        df_welch = float(df_pooled)
    return {"t": t, "df_pooled": df_pooled, "df_welch": df_welch}


def confidence_interval(s: SampleStats, alpha: float = 0.05) -> tuple[float, float]:
    """Two-sided confidence interval for the sample mean."""
    if s.std is None:
        return (s.mean, s.mean)
    q = students_t_quantile(alpha, s.n - 1)
    h = q * s.std / math.sqrt(s.n)
    return (s.mean - h, s.mean + h)


@dataclass(frozen=True)
class DeconflictConfig:
    """Thresholds for the consistency criteria, all scaled by tolerance."""

    tolerance: float = 0.5
    alpha: float = 0.05
    mean_factor: float = 1.0        # |mean difference| <= tolerance * this
    range_factor: float = 0.5       # candidate range within hi range +- tol * this
    within_factor: float = 0.25     # margin for the residual-coverage criterion
    within_fraction: float = 0.9    # required fraction inside the widened range
    std_growth: float = 1.25        # combined std <= max individual std * this
    large_std_factor: float = 0.5   # std above tol * this flags the sample
    small_overlap: float = 0.2      # overlap / max sample size below this is "small"
    equal_score_eps: float = 1e-6
    tiny_overlap: float = 0.05      # equal-score split-survey special case
    keep_gap_factor: float = 0.5    # cluster gap (vs region diagonal) that keeps
    neighbor_pairs: int = 5         # nearest cross-pairs checked when disjoint
    slope_cap: float = 1.0          # cap on the slope allowance, in tolerances
    min_decide: int = 10            # overlapping samples below this can't reject
    max_depth: int = 3
    reference_level: int = 3
    total_iterations: int = 7

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


def _bbox_overlap(a: tuple, b: tuple) -> float:
    w = min(a[1], b[1]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[2], b[2])
    return max(w, 0.0) * max(h, 0.0)


def _std_upper(s: float, n: int, conf: float = 0.95) -> float:
    """Upper confidence bound of a standard deviation estimate."""
    from scipy import stats

    if n < 2:
        return s
    return s * math.sqrt((n - 1) / stats.chi2.ppf(1 - conf, n - 1))


def _nearest_cross_pairs(hi_xy, hi_r, cand_xy, cand_r, k: int):
    """Up to k closest (distance, r_hi, r_cand, midpoint) cross pairs."""
    from scipy.spatial import cKDTree

    tree = cKDTree(hi_xy)
    dist, idx = tree.query(cand_xy, k=1)
    order = np.argsort(dist, kind="stable")[:k]
    out = []
    for j in order:
        i = int(idx[j])
        mid = 0.5 * (hi_xy[i] + cand_xy[j])
        out.append((float(dist[j]), float(hi_r[i]), float(cand_r[j]), mid))
    return out


def _cut_rect(hi_stats: SampleStats, rect, hi_cover):
    """Where a rejected candidate's points are actually dropped."""
    if hi_cover is not None:
        return _rect_intersect(rect, hi_cover)
    return _rect_intersect(rect, _removal_rect(hi_stats, rect))


def _disjoint_verdict(hi, cand, cfg: DeconflictConfig, region_diag: float,
                      data=None, reference=None) -> tuple[str, dict]:
    """Consistency of two samples whose planform domains do not overlap.

    Far-apart clusters are kept: there is room for the surface to follow
    both.  Near clusters must agree where they face each other; with point
    data the closest cross-survey pairs are compared with a slope
    allowance, otherwise the mean difference decides.
    """
    detail: dict = {"rule": "disjoint"}
    tau = cfg.tolerance
    if data is not None:
        hi_xy, hi_r, cand_xy, cand_r = data
        pairs = _nearest_cross_pairs(hi_xy, hi_r, cand_xy, cand_r,
                                     cfg.neighbor_pairs)
        gap = pairs[0][0]
        detail["gap"] = gap
        if gap >= cfg.keep_gap_factor * region_diag:
            detail["rule"] = "disjoint-far"
            return CONSISTENT, detail
        bad = 0
        for d, r1, r2, mid in pairs:
            allow = tau
            if reference is not None:
                # slope allowance for steep terrain between the clusters,
                # capped: a conflict-corrupted reference has artifact
                # gradients that must not excuse arbitrary level gaps
                g = evaluate(reference, [mid[0]], [mid[1]], order=1)
                allow = tau + min(math.hypot(g[0, 1], g[0, 2]) * d,
                                  cfg.slope_cap * tau)
            if abs(r1 - r2) > allow:
                bad += 1
        detail["rule"] = "disjoint-near"
        detail["bad_pairs"] = bad
        return (CONSISTENT if bad == 0 else NOT_CONSISTENT), detail
    # summary-only fallback
    detail["rule"] = "disjoint-stats"
    ok = abs(hi.mean - cand.mean) <= tau * cfg.mean_factor
    return (CONSISTENT if ok else NOT_CONSISTENT), detail


def element_consistency(hi: SampleStats, cand: SampleStats,
                        config: DeconflictConfig, *,
                        overlap_area: float | None = None,
                        combined: float | None = None,
                        data=None, reference=None,
                        gap_scale: float | None = None) -> tuple[str, dict]:
    """Verdict for one candidate sample against one accepted sample.

    ``overlap_area`` and ``combined`` (std of the union) are derived from
    the inputs when omitted.  ``data`` optionally carries the underlying
    (hi_xy, hi_residuals, cand_xy, cand_residuals) arrays, enabling the
    exact residual-coverage count and the nearest-point rules; without it
    normal-model fallbacks are used.  ``gap_scale`` is the length against
    which a between-clusters gap counts as room for the surface to follow
    both levels; it defaults to the samples' joint extent and must stay at
    the element scale when testing sub-domains.
    """
    tau = config.tolerance
    if overlap_area is None:
        overlap_area = _bbox_overlap(hi.bbox, cand.bbox)
    big = max(hi.size, cand.size)
    overlap_ratio = overlap_area / big if big > 0 else 0.0
    if gap_scale is None:
        x0 = min(hi.bbox[0], cand.bbox[0])
        x1 = max(hi.bbox[1], cand.bbox[1])
        y0 = min(hi.bbox[2], cand.bbox[2])
        y1 = max(hi.bbox[3], cand.bbox[3])
        gap_scale = math.hypot(x1 - x0, y1 - y0)

    detail: dict = {"overlap_area": overlap_area, "overlap_ratio": overlap_ratio}
    if hi.std is not None and cand.std is not None:
        tt = two_sample_t(hi, cand)
        detail["t"] = tt["t"]
        detail["t_limit"] = students_t_quantile(config.alpha, tt["df_welch"])
        detail["df_welch"] = tt["df_welch"]
        detail["df_pooled"] = tt["df_pooled"]

    disjoint = overlap_area <= 0.0
    if disjoint:
        verdict, d2 = _disjoint_verdict(hi, cand, config, gap_scale,
                                        data=data, reference=reference)
        detail.update(d2)
        return verdict, detail

    # criterion 1: means close relative to the tolerance
    c1 = abs(hi.mean - cand.mean) <= tau * config.mean_factor
    # criterion 2: candidate range inside the accepted range, widened
    m2 = tau * config.range_factor
    c2 = (cand.lo >= hi.lo - m2) and (cand.hi <= hi.hi + m2)
    # criterion 3: most candidate residuals inside the accepted range
    m3 = tau * config.within_factor
    if data is not None:
        _, _, _, cand_r = data
        frac = float(((cand_r >= hi.lo - m3) & (cand_r <= hi.hi + m3)).mean())
    elif cand.std is not None and cand.std > 0:
        from scipy import stats

        frac = float(stats.norm.cdf((hi.hi + m3 - cand.mean) / cand.std)
                     - stats.norm.cdf((hi.lo - m3 - cand.mean) / cand.std))
    else:
        frac = 1.0 if (hi.lo - m3 <= cand.mean <= hi.hi + m3) else 0.0
    c3 = frac >= config.within_fraction
    # criterion 4: pooling does not blow up the spread
    if combined is None:
        combined = combined_std(hi, cand)
    stds = [s for s in (hi.std, cand.std) if s is not None]
    c4 = True
    if combined is not None and stds:
        c4 = combined <= config.std_growth * max(stds)
    # spread flag on an upper confidence bound, so a lucky low estimate
    # from a small sample cannot unlock a rejection
    large_std = any(
        _std_upper(s, n) > config.large_std_factor * tau
        for s, n in ((hi.std, hi.n), (cand.std, cand.n)) if s is not None)
    detail.update({"criteria": (c1, c2, c3, c4), "within_fraction": frac,
                   "combined_std": combined, "large_std": large_std})

    if c1 and c2 and c3 and c4:
        return (INDETERMINATE if large_std else CONSISTENT), detail
    if large_std or overlap_ratio < config.small_overlap:
        return INDETERMINATE, detail
    if min(hi.n, cand.n) < config.min_decide:
        # too little evidence for an overlap rejection; range and spread
        # estimates at this sample size are mostly noise
        return INDETERMINATE, detail
    return NOT_CONSISTENT, detail


# -- sub-domain recursion on point data ---------------------------------


def _in_rect(xy: np.ndarray, rect) -> np.ndarray:
    return ((xy[:, 0] >= rect[0]) & (xy[:, 0] <= rect[1])
            & (xy[:, 1] >= rect[2]) & (xy[:, 1] <= rect[3]))


def _rect_intersect(a, b):
    return (max(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), min(a[3], b[3]))


def _removal_rect(hi: SampleStats, rect, snap_factor: float = 5.0):
    """Region a rejected candidate is cleared from, local-evidence variant.

    The accepted sample's bounding box, with each edge snapped out to the
    enclosing region edge when the gap is small enough to be a sampling
    artifact of the accepted survey's own density.  A gap much larger than
    the expected spacing marks a genuine data boundary and the cut stays at
    the box, so candidate points facing no accepted data survive.  Used
    when the accepted survey's full footprint is unknown; the pipeline
    passes the footprint instead, which is robust at low local counts.
    """
    x0, x1, y0, y1 = hi.bbox
    w = x1 - x0
    h = y1 - y0
    ex0, ex1, ey0, ey1 = rect
    # cross-extent of the boundary strip, clipped to the region
    w_eff = max(min(x1, ex1) - max(x0, ex0), 0.1 * (ex1 - ex0), 1e-300)
    h_eff = max(min(y1, ey1) - max(y0, ey0), 0.1 * (ey1 - ey0), 1e-300)
    density = hi.n / max(w * h, 0.01 * w_eff * h_eff, 1e-300)
    gx = snap_factor / (density * h_eff)
    gy = snap_factor / (density * w_eff)
    if x0 - ex0 <= gx:
        x0 = ex0
    if ex1 - x1 <= gx:
        x1 = ex1
    if y0 - ey0 <= gy:
        y0 = ey0
    if ey1 - y1 <= gy:
        y1 = ey1
    return (x0, x1, y0, y1)


def _sub_rects(hi_stats: SampleStats, cand_stats: SampleStats,
               cand_xy: np.ndarray, hi_xy: np.ndarray,
               cfg: DeconflictConfig,
               rect) -> list[tuple[float, float, float, float]]:
    """Sub-domains for a closer look at an indeterminate pair."""
    hb, cb = hi_stats.bbox, cand_stats.bbox
    R = (max(hb[0], cb[0]), min(hb[1], cb[1]),
         max(hb[2], cb[2]), min(hb[3], cb[3]))
    if cand_stats.n <= 3:
        # neighborhood of each candidate point, sized by the local spacing
        # of the accepted survey
        from scipy.spatial import cKDTree

        tree = cKDTree(hi_xy)
        rects = []
        for p in cand_xy:
            d, _ = tree.query(p, k=min(4, len(hi_xy)))
            h = 2.0 * float(np.max(np.atleast_1d(d)))
            rects.append((p[0] - h, p[0] + h, p[1] - h, p[1] + h))
        return rects
    area_r = max(R[1] - R[0], 0.0) * max(R[3] - R[2], 0.0)
    if area_r <= 0:
        return []
    if area_r < 0.8 * min(hi_stats.size, cand_stats.size):
        # the true overlap is a minor part of either domain: test it alone,
        # everything outside faces no accepted points and is kept
        return [R]
    if min(hi_stats.n, cand_stats.n) < 2 * cfg.min_decide:
        # quartering would drop below the decidable sample size
        return []
    # quarter the full region under test, not the bbox intersection, so no
    # candidate point escapes examination through bbox jitter at the edges
    xm = 0.5 * (rect[0] + rect[1])
    ym = 0.5 * (rect[2] + rect[3])
    return [(rect[0], xm, rect[2], ym), (xm, rect[1], rect[2], ym),
            (rect[0], xm, ym, rect[3]), (xm, rect[1], ym, rect[3])]


def pairwise_element_test(hi_xy, hi_r, cand_xy, cand_r,
                          cfg: DeconflictConfig, reference=None,
                          depth: int = 0, rect=None, hi_cover=None,
                          gap_scale=None):
    """Full point-level test of one candidate sample against one accepted.

    ``rect`` is the region under test (the element at the top level, the
    sub-domain inside the recursion); it bounds the removal region when the
    verdict is negative.  ``hi_cover`` is the accepted survey's full
    planform footprint when known; removal never reaches beyond it.

    Returns (verdict, keep, pending, detail).  ``keep`` is False where the
    candidate is decidedly removed.  ``pending`` marks points in pockets
    the recursion could not decide before the depth or sample-size floor;
    they stay True in ``keep`` and the caller resolves them from
    cross-element context.  Verdict INDETERMINATE means pending points
    exist; any decided sub-domain removals are in ``keep`` regardless.
    """
    hi_stats = SampleStats.from_data(hi_xy, hi_r)
    cand_stats = SampleStats.from_data(cand_xy, cand_r)
    if rect is None:
        rect = (min(hi_stats.bbox[0], cand_stats.bbox[0]),
                max(hi_stats.bbox[1], cand_stats.bbox[1]),
                min(hi_stats.bbox[2], cand_stats.bbox[2]),
                max(hi_stats.bbox[3], cand_stats.bbox[3]))
    if gap_scale is None:
        gap_scale = math.hypot(rect[1] - rect[0], rect[3] - rect[2])
    verdict, detail = element_consistency(
        hi_stats, cand_stats, cfg,
        data=(hi_xy, hi_r, cand_xy, cand_r), reference=reference,
        gap_scale=gap_scale)
    keep = np.ones(len(cand_xy), dtype=bool)
    pending = np.zeros(len(cand_xy), dtype=bool)
    if verdict == CONSISTENT:
        return verdict, keep, pending, detail
    if verdict == NOT_CONSISTENT:
        # clear the candidate from where the accepted survey has data;
        # beyond the accepted extent there is no conflict to act on
        keep = ~_in_rect(cand_xy, _cut_rect(hi_stats, rect, hi_cover))
        return verdict, keep, pending, detail
    if depth < cfg.max_depth:
        rects = _sub_rects(hi_stats, cand_stats, cand_xy, hi_xy, cfg, rect)
    else:
        rects = []
    if not rects:
        return INDETERMINATE, keep, np.ones(len(cand_xy), dtype=bool), detail
    examined = np.zeros(len(cand_xy), dtype=bool)
    for sub in rects:
        ci = _in_rect(cand_xy, sub)
        fresh = ci & ~examined
        if not fresh.any():
            continue
        examined |= fresh
        hi_in = _in_rect(hi_xy, sub)
        if not hi_in.any():
            # no accepted data here: acceptance by absence of conflict
            continue
        _, sub_keep, sub_pend, _ = pairwise_element_test(
            hi_xy[hi_in], hi_r[hi_in], cand_xy[fresh], cand_r[fresh],
            cfg, reference=reference, depth=depth + 1, rect=sub,
            hi_cover=hi_cover, gap_scale=gap_scale)
        idx = np.nonzero(fresh)[0]
        keep[idx[~sub_keep]] = False
        pending[idx[sub_pend]] = True
    # candidate points outside every sub-domain face no overlap: kept
    if pending.any():
        verdict = INDETERMINATE
    elif not keep.all():
        verdict = NOT_CONSISTENT
    else:
        verdict = CONSISTENT
    detail["subdivided"] = True
    return verdict, keep, pending, detail


# -- survey scores -------------------------------------------------------

_METHOD_RANK = {"mbes": 1.0, "lidar": 0.8, "sbes": 0.6, "chart": 0.3,
                "unknown": 0.5}


def default_scores(surveys: list[Survey]) -> list[float]:
    """Priority scores from metadata: recency, density, acquisition method.

    Surveys with an explicit score keep it.  Components are min-max
    normalized across the surveys; missing metadata contributes a neutral
    0.5.  Weights: recency 0.5, density 0.3, method 0.2.
    """

    def year_of(s: Survey):
        d = s.meta.get("date")
        if d is None:
            return None
        try:
            return float(str(d)[:4])
        except ValueError:
            return None

    def density_of(s: Survey):
        xy = s.points[:, :2]
        area = (np.ptp(xy[:, 0])) * (np.ptp(xy[:, 1]))
        return len(s.points) / area if area > 0 else None

    years = [year_of(s) for s in surveys]
    dens = [density_of(s) for s in surveys]

    def norm(vals):
        known = [v for v in vals if v is not None]
        if len(known) < 2 or max(known) == min(known):
            return [0.5 for _ in vals]
        lo, hi = min(known), max(known)
        return [0.5 if v is None else (v - lo) / (hi - lo) for v in vals]

    ny = norm(years)
    nd = norm(dens)
    out = []
    for i, s in enumerate(surveys):
        if s.score is not None:
            out.append(float(s.score))
            continue
        method = _METHOD_RANK.get(str(s.meta.get("method", "unknown")).lower(), 0.5)
        out.append(0.5 * ny[i] + 0.3 * nd[i] + 0.2 * method)
    return out


# -- pipeline ------------------------------------------------------------


def deconflict(surveys: list[Survey], reference: LRSurface,
               cfg: DeconflictConfig = DeconflictConfig()):
    """Element-wise, score-ordered pairwise deconfliction.

    Returns (cleaned_surveys, report).  Cleaned surveys preserve input
    order and metadata; removed points are dropped from their ``points``.
    The report carries per-element verdicts, per-survey removal counts,
    and the score table.
    """
    from .evaluate import eval_cache

    if len(surveys) == 0:
        raise ValueError("no surveys given")
    scores = default_scores(surveys)
    cache = eval_cache(reference)
    tau = cfg.tolerance
    fields = [distance_field(reference, s.points, tau) for s in surveys]
    covers = [(float(s.points[:, 0].min()), float(s.points[:, 0].max()),
               float(s.points[:, 1].min()), float(s.points[:, 1].max()))
              for s in surveys]
    keep_masks = [np.ones(len(s.points), dtype=bool) for s in surveys]
    ne = len(cache.elements)
    verdict_log: list[dict] = []
    pending: dict[tuple[int, int], list[tuple[int, np.ndarray, np.ndarray]]] = {}
    pair_decisions: dict[tuple[int, int], list[str]] = {}
    any_overlap = False

    # per-element survey membership
    members: list[list[tuple[int, np.ndarray]]] = [[] for _ in range(ne)]
    for si, (s, fld) in enumerate(zip(surveys, fields)):
        eid = fld["element_id"]
        ok = eid >= 0
        for e in np.unique(eid[ok]):
            members[e].append((si, np.nonzero(eid == e)[0]))

    for e in range(ne):
        present = members[e]
        if len(present) < 2:
            continue
        any_overlap = True
        order = sorted(present, key=lambda t: (-scores[t[0]], t[0]))
        accepted: list[tuple[int, np.ndarray]] = [order[0]]
        for si, idx in order[1:]:
            cand_keep = np.ones(len(idx), dtype=bool)
            cand_xy = surveys[si].points[idx][:, :2]
            cand_r = fields[si]["residual"][idx]
            for sj, jdx in accepted:
                hi_xy = surveys[sj].points[jdx][:, :2]
                hi_r = fields[sj]["residual"][jdx]
                # split-survey special case: same score, almost no overlap
                if abs(scores[si] - scores[sj]) <= cfg.equal_score_eps:
                    hs = SampleStats.from_data(hi_xy, hi_r)
                    cs = SampleStats.from_data(cand_xy, cand_r)
                    ov = _bbox_overlap(hs.bbox, cs.bbox)
                    if ov <= cfg.tiny_overlap * max(hs.size, cs.size):
                        verdict_log.append({"element": e, "hi": sj, "cand": si,
                                            "verdict": CONSISTENT,
                                            "rule": "split-survey"})
                        pair_decisions.setdefault((sj, si), []).append(CONSISTENT)
                        continue
                v, mask, pend, detail = pairwise_element_test(
                    hi_xy, hi_r, cand_xy, cand_r, cfg, reference=reference,
                    rect=cache.elements[e].rect, hi_cover=covers[sj])
                verdict_log.append({"element": e, "hi": sj, "cand": si,
                                    "verdict": v,
                                    **{k: detail[k] for k in ("t", "t_limit")
                                       if k in detail}})
                cand_keep &= mask
                if v == INDETERMINATE:
                    cut = pend & _in_rect(cand_xy, _rect_intersect(
                        cache.elements[e].rect, covers[sj]))
                    pending.setdefault((sj, si), []).append((e, idx, cut))
                else:
                    pair_decisions.setdefault((sj, si), []).append(v)
            kept_idx = idx[cand_keep]
            keep_masks[si][idx[~cand_keep]] = False
            if len(kept_idx):
                accepted.append((si, kept_idx))

    # resolve elements that stayed indeterminate: majority of the decided
    # elements for the same survey pair, removal on a tie
    for (sj, si), items in pending.items():
        decided = pair_decisions.get((sj, si), [])
        n_cons = sum(1 for v in decided if v == CONSISTENT)
        n_not = sum(1 for v in decided if v == NOT_CONSISTENT)
        treat_consistent = n_cons > n_not
        for e, idx, cut in items:
            if not treat_consistent:
                keep_masks[si][idx[cut]] = False
            verdict_log.append({"element": e, "hi": sj, "cand": si,
                                "verdict": CONSISTENT if treat_consistent
                                else NOT_CONSISTENT,
                                "rule": "cross-element-majority"})

    cleaned = []
    for s, mask in zip(surveys, keep_masks):
        cleaned.append(Survey(points=s.points[mask], name=s.name,
                              score=s.score, meta=dict(s.meta)))
    report = {
        "scores": {s.name or str(i): scores[i] for i, s in enumerate(surveys)},
        "removed": {s.name or str(i): int((~m).sum())
                    for i, (s, m) in enumerate(zip(surveys, keep_masks))},
        "kept": {s.name or str(i): int(m.sum())
                 for i, (s, m) in enumerate(zip(surveys, keep_masks))},
        "verdicts": verdict_log,
        "note": "" if any_overlap else
                "no overlapping surveys in any element; all points kept",
    }
    return cleaned, report


def deconflict_fit(surveys: list[Survey], fit_config=None,
                   cfg: DeconflictConfig = DeconflictConfig()):
    """Reference surface, cross-survey cleanup, final surface.

    A rough surface is fitted to all points with the iteration cap at
    ``cfg.reference_level``; deconfliction runs against it; the fit then
    continues from that surface on the cleaned points up to
    ``cfg.total_iterations``.  Returns (surface, cleaned_surveys, report);
    the report gains the reference/final iteration rows and flags.
    """
    from dataclasses import replace

    from .adaptive import FitConfig, fit

    if fit_config is None:
        fit_config = FitConfig(tolerance=cfg.tolerance)
    if abs(fit_config.tolerance - cfg.tolerance) > 1e-12 * cfg.tolerance:
        raise ValueError("fit tolerance and deconfliction tolerance differ")
    all_pts = np.concatenate([s.points for s in surveys])
    ref_cfg = replace(fit_config, max_iterations=cfg.reference_level)
    reference, ref_reports, _ = fit(all_pts, ref_cfg)
    cleaned, report = deconflict(surveys, reference, cfg)
    kept_pts = np.concatenate([s.points for s in cleaned])
    if len(kept_pts) == 0:
        raise ValueError("deconfliction removed every point")
    final_cfg = replace(fit_config, max_iterations=cfg.total_iterations)
    surface, fin_reports, flags = fit(kept_pts, final_cfg, start=reference,
                                      first_iteration=cfg.reference_level)
    report["reference_iterations"] = ref_reports
    report["final_iterations"] = fin_reports
    report["flags"] = flags
    return surface, cleaned, report
