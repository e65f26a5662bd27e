"""Box-partition meshes and locally refined B-spline surfaces.

A surface is a collection of scaled B-splines, each defined by short local
knot vectors (degree + 2 knots per direction) over a rectangular domain.
The mesh is the set of axis-parallel knot-line segments; elements are the
maximal rectangles not crossed by any segment.  Refinement inserts segments
that span at least one B-spline support; affected B-splines are split by
univariate knot insertion until every knot line that fully traverses a
support is reflected in that B-spline's knot vector.
"""
from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Segment",
    "Element",
    "BoxMesh",
    "ScaledBSpline",
    "LRSurface",
    "make_tensor_surface",
    "insert_segment",
    "insert_segments",
    "elements_of",
    "validate_surface",
    "independence_report",
    "restrict",
    "transpose",
]

# Relative snap tolerance: coordinates closer than this (relative to the
# domain extent) are considered the same mesh line.  Must stay well below
# half the minimal element width enforced by refinement (extent / 2**15).
SNAP_REL = 1e-9


@dataclass(frozen=True)
class Segment:
    """Axis-parallel knot line segment.

    axis 0 is a line of constant u (it adds u-knots when inserted); axis 1
    is a line of constant v.  ``pos`` is the coordinate on ``axis``, the
    interval [lo, hi] lives on the other axis.
    """

    axis: int
    pos: float
    lo: float
    hi: float
    mult: int = 1


@dataclass(frozen=True)
class Element:
    index: int
    u_lo: float
    u_hi: float
    v_lo: float
    v_hi: float

    @property
    def rect(self) -> tuple[float, float, float, float]:
        return (self.u_lo, self.u_hi, self.v_lo, self.v_hi)

    @property
    def area(self) -> float:
        return (self.u_hi - self.u_lo) * (self.v_hi - self.v_lo)

    def center(self) -> tuple[float, float]:
        return (0.5 * (self.u_lo + self.u_hi), 0.5 * (self.v_lo + self.v_hi))


def _merge_cover(parts: list[tuple[float, float, int]], lo: float, hi: float,
                 mult: int) -> list[tuple[float, float, int]]:
    """Merge interval [lo, hi] at multiplicity ``mult`` into a sorted,
    disjoint piece list, taking the pointwise maximum multiplicity."""
    events = {lo, hi}
    for a, b, _ in parts:
        events.add(a)
        events.add(b)
    cuts = sorted(events)
    out: list[tuple[float, float, int]] = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        m = 0
        for pa, pb, pm in parts:
            if pa <= a and b <= pb:
                m = max(m, pm)
        if lo <= a and b <= hi:
            m = max(m, mult)
        if m > 0:
            if out and out[-1][1] == a and out[-1][2] == m:
                out[-1] = (out[-1][0], b, m)
            else:
                out.append((a, b, m))
    return out


class BoxMesh:
    """Mesh of axis-parallel segments over a rectangular domain.

    Coordinates are snapped to per-axis tables so equality tests on knot
    values are exact.  Coverage is stored per (axis, position) as disjoint
    intervals with multiplicities.
    """

    def __init__(self, domain: tuple[float, float, float, float]):
        umin, umax, vmin, vmax = map(float, domain)
        if not (umax > umin and vmax > vmin):
            raise ValueError("degenerate domain")
        self.domain = (umin, umax, vmin, vmax)
        self._coords: list[list[float]] = [[umin, umax], [vmin, vmax]]
        self._cover: list[dict[float, list[tuple[float, float, int]]]] = [{}, {}]
        self._cover_pos: list[list[float]] = [[], []]
        self.version = 0
        self._el_cache: tuple | None = None

    # -- coordinates -------------------------------------------------

    def extent(self, axis: int) -> float:
        lo, hi = self.domain[2 * axis], self.domain[2 * axis + 1]
        return hi - lo

    def snap(self, axis: int, value: float, insert: bool = False) -> float:
        """Return the table coordinate for ``value``; optionally add it."""
        coords = self._coords[axis]
        tol = SNAP_REL * self.extent(axis)
        i = bisect.bisect_left(coords, value)
        for j in (i - 1, i):
            if 0 <= j < len(coords) and abs(coords[j] - value) <= tol:
                return coords[j]
        if not insert:
            raise KeyError(f"coordinate {value!r} is not on a mesh line of axis {axis}")
        coords.insert(i, float(value))
        return float(value)

    def has_coord(self, axis: int, value: float) -> bool:
        try:
            self.snap(axis, value)
            return True
        except KeyError:
            return False

    def coords(self, axis: int) -> np.ndarray:
        return np.asarray(self._coords[axis])

    # -- coverage ----------------------------------------------------

    def add_cover(self, axis: int, pos: float, lo: float, hi: float, mult: int) -> bool:
        """Merge coverage; returns True when the mesh actually changed."""
        cov = self._cover[axis]
        old = cov.get(pos, [])
        new = _merge_cover(old, lo, hi, mult)
        if new == old:
            return False
        cov[pos] = new
        if not old:
            bisect.insort(self._cover_pos[axis], pos)
        self.version += 1
        self._el_cache = None
        return True

    def cover_mult(self, axis: int, pos: float, lo: float, hi: float) -> int:
        """Minimal multiplicity of coverage over [lo, hi]; 0 if any gap."""
        parts = self._cover[axis].get(pos)
        if not parts:
            return 0
        cur = lo
        m = 1 << 30
        for a, b, pm in parts:
            if b <= cur:
                continue
            if a > cur:
                return 0
            m = min(m, pm)
            cur = b
            if cur >= hi:
                return m
        return 0

    def covered_positions(self, axis: int, lo: float, hi: float) -> list[float]:
        """Coverage positions strictly inside (lo, hi) on ``axis``."""
        pos = self._cover_pos[axis]
        i = bisect.bisect_right(pos, lo)
        j = bisect.bisect_left(pos, hi)
        return pos[i:j]

    def segments(self) -> list[Segment]:
        out = []
        for axis in (0, 1):
            for pos in self._cover_pos[axis]:
                for lo, hi, m in self._cover[axis][pos]:
                    out.append(Segment(axis, pos, lo, hi, m))
        return out

    # -- elements ----------------------------------------------------

    def elements(self):
        """Compute the box partition.

        Returns (elements, cell_map, ucells, vcells) where ucells/vcells are
        the fine-grid cut coordinates and cell_map maps fine cells to element
        indices.  Cached until the mesh changes.
        """
        if self._el_cache is not None:
            return self._el_cache
        uc = self.coords(0)
        vc = self.coords(1)
        nu, nv = len(uc) - 1, len(vc) - 1

        # vcut[i, j]: vertical edge at u=uc[i+1] between cells (i,j),(i+1,j)
        vcut = np.zeros((max(nu - 1, 0), nv), dtype=bool)
        ucut = np.zeros((nu, max(nv - 1, 0)), dtype=bool)
        for pos in self._cover_pos[0]:
            i = int(np.searchsorted(uc, pos))
            if not (0 < i < nu):
                continue
            for lo, hi, _ in self._cover[0][pos]:
                j0 = int(np.searchsorted(vc, lo))
                j1 = int(np.searchsorted(vc, hi))
                vcut[i - 1, j0:j1] = True
        for pos in self._cover_pos[1]:
            j = int(np.searchsorted(vc, pos))
            if not (0 < j < nv):
                continue
            for lo, hi, _ in self._cover[1][pos]:
                i0 = int(np.searchsorted(uc, lo))
                i1 = int(np.searchsorted(uc, hi))
                ucut[i0:i1, j - 1] = True

        cell_map = np.full((nu, nv), -1, dtype=np.int32)
        elements: list[Element] = []
        for j0 in range(nv):
            for i0 in range(nu):
                if cell_map[i0, j0] >= 0:
                    continue
                i1 = i0
                while i1 + 1 < nu and not vcut[i1, j0]:
                    i1 += 1
                j1 = j0
                while j1 + 1 < nv and not ucut[i0:i1 + 1, j1].any():
                    j1 += 1
                idx = len(elements)
                elements.append(Element(idx, float(uc[i0]), float(uc[i1 + 1]),
                                        float(vc[j0]), float(vc[j1 + 1])))
                cell_map[i0:i1 + 1, j0:j1 + 1] = idx
        self._el_cache = (elements, cell_map, uc, vc)
        return self._el_cache


@dataclass
class ScaledBSpline:
    """One B-spline with local knot vectors and a positive scaling factor.

    ``knots`` holds one tuple per direction, each of length degree + 2.
    The scaling keeps the collection a partition of unity; the elevation
    coefficient lives in the owning surface's coefficient array.
    """

    knots: tuple[tuple[float, ...], tuple[float, ...]]
    scaling: float = 1.0

    @property
    def ku(self) -> tuple[float, ...]:
        return self.knots[0]

    @property
    def kv(self) -> tuple[float, ...]:
        return self.knots[1]

    def support(self) -> tuple[float, float, float, float]:
        ku, kv = self.knots
        return (ku[0], ku[-1], kv[0], kv[-1])

    def key(self) -> tuple:
        return self.knots


class LRSurface:
    """Locally refined B-spline elevation surface F(u, v) = sum s_i P_i N_i.

    Evaluation is read-only and cache-backed; refinement and coefficient
    updates mutate the surface in place and bump ``version`` so caches
    rebuild.  Single-writer semantics: never refine while another part of
    the program holds evaluation state for the same surface.
    """

    def __init__(self, degrees: tuple[int, int], mesh: BoxMesh,
                 bsplines: list[ScaledBSpline], coeffs: np.ndarray,
                 units: tuple[str, str] = ("local-xy", "m")):
        self.degrees = (int(degrees[0]), int(degrees[1]))
        self.mesh = mesh
        self.bsplines = bsplines
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.units = units
        self._index: dict[tuple, int] = {b.key(): i for i, b in enumerate(bsplines)}
        self.version = 0

    def __len__(self) -> int:
        return len(self.bsplines)

    @property
    def domain(self) -> tuple[float, float, float, float]:
        return self.mesh.domain

    def bump(self) -> None:
        self.version += 1

    def canonical_order(self) -> None:
        """Sort B-splines by knot vectors so output order is reproducible."""
        order = sorted(range(len(self.bsplines)), key=lambda i: self.bsplines[i].key())
        self.bsplines = [self.bsplines[i] for i in order]
        self.coeffs = self.coeffs[order]
        self._index = {b.key(): i for i, b in enumerate(self.bsplines)}
        self.bump()

    def copy(self) -> "LRSurface":
        mesh = BoxMesh(self.mesh.domain)
        mesh._coords = [list(c) for c in self.mesh._coords]
        mesh._cover = [{p: list(parts) for p, parts in cov.items()}
                       for cov in self.mesh._cover]
        mesh._cover_pos = [list(p) for p in self.mesh._cover_pos]
        bs = [ScaledBSpline(b.knots, b.scaling) for b in self.bsplines]
        return LRSurface(self.degrees, mesh, bs, self.coeffs.copy(), self.units)

    def replace_contents(self, other: "LRSurface") -> None:
        self.degrees = other.degrees
        self.mesh = other.mesh
        self.bsplines = other.bsplines
        self.coeffs = other.coeffs
        self.units = other.units
        self._index = other._index
        self.bump()


def make_tensor_surface(domain: tuple[float, float, float, float],
                        degrees: tuple[int, int] = (2, 2),
                        grid: tuple[int, int] = (7, 7),
                        coeff: float = 0.0,
                        units: tuple[str, str] = ("local-xy", "m")) -> LRSurface:
    """Uniform tensor-product start space with ``grid`` coefficients per
    direction and clamped (open) boundary knots."""
    du, dv = degrees
    nu, nv = grid
    if nu < du + 1 or nv < dv + 1:
        raise ValueError("grid must provide at least degree+1 coefficients per direction")
    mesh = BoxMesh(domain)
    umin, umax, vmin, vmax = mesh.domain
    full: list[list[float]] = []
    for axis, (lo, hi, d, n) in enumerate(((umin, umax, du, nu), (vmin, vmax, dv, nv))):
        interior = list(np.linspace(lo, hi, n - d + 1)[1:-1])
        interior = [mesh.snap(axis, c, insert=True) for c in interior]
        full.append([lo] * (d + 1) + interior + [hi] * (d + 1))
    # boundary lines carry multiplicity degree+1, interior lines 1
    for axis, d in ((0, du), (1, dv)):
        o_lo = mesh.domain[2 * (1 - axis)]
        o_hi = mesh.domain[2 * (1 - axis) + 1]
        lo, hi = mesh.domain[2 * axis], mesh.domain[2 * axis + 1]
        mesh.add_cover(axis, lo, o_lo, o_hi, d + 1)
        mesh.add_cover(axis, hi, o_lo, o_hi, d + 1)
        for c in full[axis][d + 1:-(d + 1)]:
            mesh.add_cover(axis, c, o_lo, o_hi, 1)
    bsplines = []
    for i in range(nu):
        ku = tuple(full[0][i:i + du + 2])
        for j in range(nv):
            kv = tuple(full[1][j:j + dv + 2])
            bsplines.append(ScaledBSpline((ku, kv), 1.0))
    coeffs = np.full(len(bsplines), float(coeff))
    return LRSurface(degrees, mesh, bsplines, coeffs, units)


# -- knot insertion ---------------------------------------------------


def _insert_knot_1d(t: tuple[float, ...], d: int, c: float):
    """Split one degree-``d`` B-spline knot vector at ``c``.

    Returns ((alpha1, t1), (alpha2, t2)) such that
    N_t = alpha1 * N_t1 + alpha2 * N_t2.
    """
    ext = sorted(t + (c,))
    t1 = tuple(ext[:-1])
    t2 = tuple(ext[1:])
    if c >= t[d]:
        a1 = 1.0
    else:
        a1 = (c - t[0]) / (t[d] - t[0])
    if c <= t[1]:
        a2 = 1.0
    else:
        a2 = (t[d + 1] - c) / (t[d + 1] - t[1])
    return (a1, t1), (a2, t2)


def _find_split(surface: LRSurface, b: ScaledBSpline):
    """First (axis, pos) where mesh coverage fully traverses the support
    at higher multiplicity than the B-spline's own knot vector carries."""
    mesh = surface.mesh
    for axis in (0, 1):
        kn = b.knots[axis]
        lo, hi = kn[0], kn[-1]
        other = b.knots[1 - axis]
        olo, ohi = other[0], other[-1]
        for pos in mesh.covered_positions(axis, lo, hi):
            have = kn.count(pos)
            if have >= surface.degrees[axis] + 1:
                continue
            avail = mesh.cover_mult(axis, pos, olo, ohi)
            if avail > have:
                return axis, pos
    return None


def _split_worklist(surface: LRSurface, seeds) -> None:
    """Split every B-spline (transitively) that a mesh line now traverses.

    ``seeds`` is an iterable of indices to start from; products re-enter the
    queue.  Duplicate products merge by summing scaled contributions.
    """
    bs = surface.bsplines
    coeffs = list(surface.coeffs)
    index = surface._index
    alive = [True] * len(bs)
    work = deque(seeds)
    while work:
        i = work.popleft()
        if i >= len(bs) or not alive[i]:
            continue
        b = bs[i]
        hit = _find_split(surface, b)
        if hit is None:
            continue
        axis, pos = hit
        (a1, t1), (a2, t2) = _insert_knot_1d(b.knots[axis], surface.degrees[axis], pos)
        alive[i] = False
        del index[b.key()]
        for a, tk in ((a1, t1), (a2, t2)):
            knots = (tk, b.knots[1]) if axis == 0 else (b.knots[0], tk)
            s_new = b.scaling * a
            j = index.get(knots)
            if j is not None and alive[j]:
                ex = bs[j]
                tot = ex.scaling + s_new
                coeffs[j] = (ex.scaling * coeffs[j] + s_new * coeffs[i]) / tot
                bs[j] = ScaledBSpline(knots, tot)
            else:
                bs.append(ScaledBSpline(knots, s_new))
                coeffs.append(coeffs[i])
                alive.append(True)
                j = len(bs) - 1
                index[knots] = j
                work.append(j)
    surface.bsplines = [b for b, a in zip(bs, alive) if a]
    surface.coeffs = np.array([c for c, a in zip(coeffs, alive) if a])
    surface._index = {b.key(): i for i, b in enumerate(surface.bsplines)}
    surface.canonical_order()


def insert_segment(surface: LRSurface, seg: Segment) -> None:
    """Insert one knot-line segment and resolve all induced splits.

    The segment must be axis-parallel inside the domain, its endpoints must
    lie on existing mesh lines, and it must fully traverse at least one
    B-spline support (or be already contained in the mesh, a no-op).
    Geometry is preserved exactly up to floating point.
    """
    mesh = surface.mesh
    axis = seg.axis
    if axis not in (0, 1):
        raise ValueError("segment axis must be 0 or 1")
    lo_d, hi_d = mesh.domain[2 * axis], mesh.domain[2 * axis + 1]
    if not (lo_d <= seg.pos <= hi_d):
        raise ValueError(f"segment position {seg.pos} outside domain axis {axis}")
    try:
        lo = mesh.snap(1 - axis, seg.lo)
        hi = mesh.snap(1 - axis, seg.hi)
    except KeyError as exc:
        raise ValueError(f"segment endpoints must lie on existing mesh lines: {exc}") from exc
    if not lo < hi:
        raise ValueError("segment has empty extent")
    pos = mesh.snap(axis, seg.pos, insert=True)

    # legality: after merging, the segment must traverse some support at a
    # multiplicity its knot vector does not yet carry, unless it is a no-op
    old_parts = list(mesh._cover[axis].get(pos, []))
    changed = mesh.add_cover(axis, pos, lo, hi, seg.mult)
    if not changed:
        return
    splittable = False
    for b in surface.bsplines:
        kn = b.knots[axis]
        if not (kn[0] < pos < kn[-1]):
            continue
        other = b.knots[1 - axis]
        avail = mesh.cover_mult(axis, pos, other[0], other[-1])
        if avail > kn.count(pos):
            splittable = True
            break
    if not splittable:
        # roll back: a new line must span at least one B-spline support
        if old_parts:
            mesh._cover[axis][pos] = old_parts
        else:
            del mesh._cover[axis][pos]
            mesh._cover_pos[axis].remove(pos)
            mesh._coords[axis].remove(pos) if pos not in (lo_d, hi_d) and not any(
                pos in (b.knots[axis]) for b in surface.bsplines) else None
        mesh.version += 1
        mesh._el_cache = None
        raise ValueError("segment does not traverse any B-spline support")
    _split_worklist(surface, range(len(surface.bsplines)))
    surface.bump()


def insert_segments(surface: LRSurface, segments) -> None:
    """Batch insert: merge all coverage first, then one global split pass.

    Intended for refinement batches whose legality is known by construction
    (each segment spans the support of the B-spline that requested it).
    """
    any_change = False
    mesh = surface.mesh
    for seg in segments:
        pos = mesh.snap(seg.axis, seg.pos, insert=True)
        lo = mesh.snap(1 - seg.axis, seg.lo)
        hi = mesh.snap(1 - seg.axis, seg.hi)
        any_change |= mesh.add_cover(seg.axis, pos, lo, hi, seg.mult)
    if any_change:
        _split_worklist(surface, range(len(surface.bsplines)))
        surface.bump()


# -- queries -----------------------------------------------------------


def residents_of(surface: LRSurface):
    """Per element, the indices of B-splines whose support covers it.

    Returns (elements, residents, cell_map, uc, vc); residents is a list of
    int arrays aligned with elements.
    """
    elements, cell_map, uc, vc = surface.mesh.elements()
    res: list[list[int]] = [[] for _ in elements]
    for i, b in enumerate(surface.bsplines):
        u0, u1, v0, v1 = b.support()
        i0 = int(np.searchsorted(uc, u0))
        i1 = int(np.searchsorted(uc, u1))
        j0 = int(np.searchsorted(vc, v0))
        j1 = int(np.searchsorted(vc, v1))
        for e in np.unique(cell_map[i0:i1, j0:j1]):
            res[e].append(i)
    residents = [np.asarray(r, dtype=np.int64) for r in res]
    return elements, residents, cell_map, uc, vc


def elements_of(surface: LRSurface):
    """Elements of the box partition with their resident B-spline sets."""
    elements, residents, _, _, _ = residents_of(surface)
    return list(zip(elements, residents))


def validate_surface(surface: LRSurface, check_unity: bool = True) -> None:
    """Structural invariants; raises AssertionError with a diagnostic.

    Checks that every B-spline knot lies on a segment traversing its
    support, that scaling factors are positive, that the element partition
    is consistent with the segment arrangement, and (optionally) partition
    of unity at random sample points.
    """
    mesh = surface.mesh
    du, dv = surface.degrees
    for i, b in enumerate(surface.bsplines):
        assert b.scaling > 0, f"B-spline {i} has non-positive scaling"
        for axis, d in ((0, du), (1, dv)):
            kn = b.knots[axis]
            assert len(kn) == d + 2, f"B-spline {i} axis {axis} has wrong knot count"
            other = b.knots[1 - axis]
            for pos in set(kn):
                m = mesh.cover_mult(axis, pos, other[0], other[-1])
                assert m >= kn.count(pos), (
                    f"B-spline {i} knot {pos} on axis {axis} not fully traversed")
    elements, cell_map, uc, vc = mesh.elements()
    assert (cell_map >= 0).all(), "unassigned fine cells"
    # covered edges must separate elements, uncovered edges must not
    for i in range(len(uc) - 2):
        for j in range(len(vc) - 1):
            covered = mesh.cover_mult(0, uc[i + 1], vc[j], vc[j + 1]) > 0
            same = cell_map[i, j] == cell_map[i + 1, j]
            assert covered != same, f"edge inconsistency at u={uc[i+1]}, cell {j}"
    for i in range(len(uc) - 1):
        for j in range(len(vc) - 2):
            covered = mesh.cover_mult(1, vc[j + 1], uc[i], uc[i + 1]) > 0
            same = cell_map[i, j] == cell_map[i, j + 1]
            assert covered != same, f"edge inconsistency at v={vc[j+1]}, cell {i}"
    if check_unity:
        from .evaluate import partition_of_unity
        rng = np.random.default_rng(0)
        umin, umax, vmin, vmax = mesh.domain
        x = rng.uniform(umin, umax, 200)
        y = rng.uniform(vmin, vmax, 200)
        unity = partition_of_unity(surface, x, y)
        err = np.abs(unity - 1.0).max()
        assert err <= 1e-10, f"partition of unity violated: {err}"


def independence_report(surface: LRSurface, samples_per_dir: int | None = None) -> dict:
    """Sampling-based linear independence diagnostic.

    Builds a collocation matrix on a dense per-element sample grid and
    checks its column rank through the Gram matrix spectrum.  This flags
    dependence reliably at desk scale but is not a structural proof.
    """
    from .evaluate import basis_matrix_on_element, eval_cache
    du, dv = surface.degrees
    n = samples_per_dir or (max(du, dv) + 2)
    elements, residents, _, _, _ = residents_of(surface)
    L = len(surface.bsplines)
    if L > 4000:
        raise ValueError("independence diagnostic is limited to 4000 B-splines")
    gram = np.zeros((L, L))
    cache = eval_cache(surface)
    for el, res in zip(elements, residents):
        tu = np.linspace(el.u_lo, el.u_hi, n + 2)[1:-1]
        tv = np.linspace(el.v_lo, el.v_hi, n + 2)[1:-1]
        xx, yy = np.meshgrid(tu, tv, indexing="ij")
        B = basis_matrix_on_element(cache, el.index, xx.ravel(), yy.ravel())
        gram[np.ix_(res, res)] += B.T @ B
    w = np.linalg.eigvalsh(gram)
    tol = max(w[-1], 1.0) * 1e-12 * L
    rank = int((w > tol).sum())
    cap = (du + 1) * (dv + 1)
    suspects = [el.index for el, res in zip(elements, residents) if len(res) > cap]
    return {
        "n_bsplines": L,
        "rank": rank,
        "full_rank": rank == L,
        "min_eigenvalue": float(w[0]),
        "suspect_elements": suspects,
    }


# -- restriction and transposition -------------------------------------


def restrict(surface: LRSurface, rect: tuple[float, float, float, float]) -> LRSurface:
    """Exact restriction of the surface to a sub-rectangle.

    Inserts full clamped knot lines (multiplicity degree+1) along the
    rectangle edges, then keeps the B-splines supported inside.  The
    restricted surface evaluates identically to the original on ``rect``.
    """
    out = surface.copy()
    umin, umax, vmin, vmax = out.mesh.domain
    r0 = (max(rect[0], umin), min(rect[1], umax), max(rect[2], vmin), min(rect[3], vmax))
    if not (r0[0] < r0[1] and r0[2] < r0[3]):
        raise ValueError("restriction rectangle is empty")
    # snap edges onto existing mesh lines so knot comparisons below are exact
    r = (out.mesh.snap(0, r0[0], insert=True), out.mesh.snap(0, r0[1], insert=True),
         out.mesh.snap(1, r0[2], insert=True), out.mesh.snap(1, r0[3], insert=True))
    du, dv = out.degrees
    segs = []
    for axis, d, lo, hi in ((0, du, r[0], r[1]), (1, dv, r[2], r[3])):
        o_lo = out.mesh.domain[2 * (1 - axis)]
        o_hi = out.mesh.domain[2 * (1 - axis) + 1]
        for pos in (lo, hi):
            segs.append(Segment(axis, pos, o_lo, o_hi, d + 1))
    insert_segments(out, segs)

    keep = [i for i, b in enumerate(out.bsplines)
            if b.ku[0] >= r[0] and b.ku[-1] <= r[1]
            and b.kv[0] >= r[2] and b.kv[-1] <= r[3]]
    bsplines = [out.bsplines[i] for i in keep]
    coeffs = out.coeffs[keep]

    mesh = BoxMesh(r)
    for axis in (0, 1):
        a_lo, a_hi = r[2 * axis], r[2 * axis + 1]
        o_lo, o_hi = r[2 * (1 - axis)], r[2 * (1 - axis) + 1]
        for c in out.mesh._coords[axis]:
            if a_lo <= c <= a_hi:
                mesh.snap(axis, c, insert=True)
        for pos, parts in out.mesh._cover[axis].items():
            if not (a_lo <= pos <= a_hi):
                continue
            for lo, hi, m in parts:
                lo2, hi2 = max(lo, o_lo), min(hi, o_hi)
                if lo2 < hi2:
                    mesh.add_cover(axis, pos, lo2, hi2, m)
    res = LRSurface(out.degrees, mesh, bsplines, coeffs, out.units)
    res.canonical_order()
    return res


def transpose(surface: LRSurface) -> LRSurface:
    """Swap the two parameter directions (u, v) -> (v, u)."""
    d = surface.mesh.domain
    mesh = BoxMesh((d[2], d[3], d[0], d[1]))
    mesh._coords = [list(surface.mesh._coords[1]), list(surface.mesh._coords[0])]
    mesh._cover = [
        {p: list(parts) for p, parts in surface.mesh._cover[1].items()},
        {p: list(parts) for p, parts in surface.mesh._cover[0].items()},
    ]
    mesh._cover_pos = [list(surface.mesh._cover_pos[1]), list(surface.mesh._cover_pos[0])]
    bs = [ScaledBSpline((b.kv, b.ku), b.scaling) for b in surface.bsplines]
    out = LRSurface((surface.degrees[1], surface.degrees[0]), mesh, bs,
                    surface.coeffs.copy(), surface.units)
    out.canonical_order()
    return out
