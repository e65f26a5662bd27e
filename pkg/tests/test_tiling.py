import json

import numpy as np
import pytest

from lrterrain import evaluate, make_tensor_surface, restrict
from lrterrain.adaptive import FitConfig, fit
from lrterrain.benchmark import benchmark_points
from lrterrain.evaluate import distance_field
from lrterrain.tiling import (
    Tile,
    TileFit,
    fit_tiles,
    make_tiles,
    read_manifest,
    stitch_c0,
    stitch_c1,
    stitch_grid,
    tile_index,
    write_manifest,
)
from conftest import random_refined_surface


def edge_gap(a, b, axis=0, n=1000, order=0):
    """Largest cross-boundary disagreement sampled along the shared edge."""
    if axis == 0:
        xs = a.domain[1]
        t = np.linspace(a.domain[2], a.domain[3], n)
        fa = evaluate(a, np.full(n, xs), t, order=order)
        fb = evaluate(b, np.full(n, xs), t, order=order)
    else:
        ys = a.domain[3]
        t = np.linspace(a.domain[0], a.domain[1], n)
        fa = evaluate(a, t, np.full(n, ys), order=order)
        fb = evaluate(b, t, np.full(n, ys), order=order)
    return np.max(np.abs(fa - fb), axis=0)


def plane_points(rng, bbox, n=4000):
    x = rng.uniform(bbox[0], bbox[1], n)
    y = rng.uniform(bbox[2], bbox[3], n)
    return np.column_stack([x, y, 1.5 * x - 0.7 * y + 2.0])


# -- tile layout ----------------------------------------------------------


def test_single_tile_covers_bbox():
    (t,) = make_tiles((0, 10, -5, 5), (1, 1))
    assert t.core == (0, 10, -5, 5)
    assert t.expanded == (0, 10, -5, 5)


def test_zero_overlap_is_exact_partition():
    tiles = make_tiles((0, 8, 0, 6), (4, 3), overlap=0.0)
    assert len(tiles) == 12
    for t in tiles:
        assert t.expanded == t.core
    xs = sorted({t.core[0] for t in tiles} | {t.core[1] for t in tiles})
    assert xs == [0, 2, 4, 6, 8]


def test_layout_validation():
    with pytest.raises(ValueError):
        make_tiles((0, 1, 0, 1), (0, 2))
    with pytest.raises(ValueError):
        make_tiles((1, 1, 0, 1), (2, 2))
    with pytest.raises(ValueError):
        make_tiles((0, 1, 0, 1), (2, 2), overlap=-0.1)


def test_expanded_tiles_cover_and_cores_partition(rng):
    bbox = (0, 10, 0, 6)
    tiles = make_tiles(bbox, (5, 3))
    x = rng.uniform(bbox[0], bbox[1], 500)
    y = rng.uniform(bbox[2], bbox[3], 500)
    for xi, yi in zip(x, y):
        in_exp = sum(t.expanded[0] <= xi <= t.expanded[1]
                     and t.expanded[2] <= yi <= t.expanded[3] for t in tiles)
        in_core = sum(t.core[0] <= xi < t.core[1]
                      and t.core[2] <= yi < t.core[3] for t in tiles)
        assert in_exp >= 1
        assert in_core == 1


def test_tile_index_matches_core_membership(rng):
    bbox = (-3, 9, 2, 20)
    counts = (4, 5)
    tiles = make_tiles(bbox, counts)
    x = rng.uniform(bbox[0], bbox[1], 300)
    y = rng.uniform(bbox[2], bbox[3], 300)
    ix, iy = tile_index(bbox, counts, x, y)
    for xi, yi, i, j in zip(x, y, ix, iy):
        t = tiles[j * counts[0] + i]
        assert t.ix == i and t.iy == j
        assert t.core[0] <= xi <= t.core[1]
        assert t.core[2] <= yi <= t.core[3]
    # bbox maximum belongs to the last tile
    ix, iy = tile_index(bbox, counts, [9.0], [20.0])
    assert ix[0] == 3 and iy[0] == 4


# -- per-tile fitting -----------------------------------------------------


def test_single_tile_fit_equals_plain_fit(rng):
    pts, tau = benchmark_points(5000)
    cfg = FitConfig(tolerance=tau, max_iterations=2)
    plain, _, _ = fit(pts, cfg, domain=(0, 100, 0, 100))
    (tf,) = fit_tiles(pts, make_tiles((0, 100, 0, 100), (1, 1)), cfg)
    x = rng.uniform(0, 100, 400)
    y = rng.uniform(0, 100, 400)
    assert np.max(np.abs(evaluate(tf.surface, x, y) - evaluate(plain, x, y))) < 1e-12
    assert tf.n_points == len(pts)
    assert set(tf.flags) == {"converged", "frozen", "iterations"}


def test_empty_tile_becomes_hole(rng):
    # all points in the left half, so the right tiles have nothing to fit
    pts = plane_points(rng, (0, 4.5, 0, 10), n=3000)
    fits = fit_tiles(pts, make_tiles((0, 10, 0, 10), (2, 1), overlap=0.0),
                     FitConfig(tolerance=1e-3, max_iterations=1))
    assert fits[0].surface is not None
    assert fits[1].surface is None
    assert fits[1].n_points == 0


def test_plane_tiles_nearly_agree_before_stitching(rng):
    pts = plane_points(rng, (0, 10, 0, 10))
    fits = fit_tiles(pts, make_tiles((0, 10, 0, 10), (2, 1)),
                     FitConfig(tolerance=1e-6, max_iterations=1))
    a, b = fits[0].surface, fits[1].surface
    assert a.domain[1] == b.domain[0]
    assert edge_gap(a, b) < 1e-6


# -- pairwise stitching ---------------------------------------------------


def test_stitch_c0_closes_random_pair():
    s = random_refined_surface(7, domain=(0, 2, 0, 1), grid=(9, 5))
    a = restrict(s, (0, 1, 0, 1))
    b = restrict(s, (1, 2, 0, 1))
    # perturb one side so the traces genuinely differ
    b.coeffs += 0.1 * np.sin(np.arange(len(b)))
    before = edge_gap(a, b)
    assert before > 1e-3
    a2, b2 = stitch_c0(a, b)
    assert edge_gap(a2, b2) < 1e-10
    # inputs untouched
    assert edge_gap(a, b) == before


def test_stitch_c0_identical_halves_change_nothing(rng):
    s = random_refined_surface(3, domain=(0, 2, 0, 1), grid=(9, 5))
    a = restrict(s, (0, 1, 0, 1))
    b = restrict(s, (1, 2, 0, 1))
    a2, b2 = stitch_c0(a, b)
    x = rng.uniform(0, 1, 300)
    y = rng.uniform(0, 1, 300)
    assert np.max(np.abs(evaluate(a2, x, y) - evaluate(a, x, y))) < 1e-12
    assert np.max(np.abs(evaluate(b2, x + 1, y) - evaluate(b, x + 1, y))) < 1e-12


def test_stitch_interior_is_local(rng):
    s = random_refined_surface(11, domain=(0, 2, 0, 1), grid=(9, 5))
    a = restrict(s, (0, 1, 0, 1))
    b = restrict(s, (1, 2, 0, 1))
    b.coeffs += rng.normal(0, 0.05, len(b))
    a2, _ = stitch_c1(a, b)
    # away from the boundary strip the surface is bit-identical
    x = rng.uniform(0.01, 0.5, 300)
    y = rng.uniform(0.01, 0.99, 300)
    assert np.array_equal(evaluate(a2, x, y), evaluate(a, x, y))


def test_stitch_c1_plane_stays_plane(rng):
    pts = plane_points(rng, (0, 10, 0, 10))
    fits = fit_tiles(pts, make_tiles((0, 10, 0, 10), (2, 1)),
                     FitConfig(tolerance=1e-6, max_iterations=1))
    a, b = stitch_c1(fits[0].surface, fits[1].surface,
                     weights=(fits[0].n_points, fits[1].n_points))
    x = rng.uniform(0, 10, 500)
    y = rng.uniform(0, 10, 500)
    z = np.empty(500)
    left = x <= 5
    z[left] = evaluate(a, x[left], y[left])
    z[~left] = evaluate(b, x[~left], y[~left])
    assert np.max(np.abs(z - (1.5 * x - 0.7 * y + 2.0))) < 1e-6
    assert max(edge_gap(a, b, order=1)) < 1e-9


def test_stitch_c1_closes_value_and_derivative():
    s = random_refined_surface(19, domain=(0, 2, 0, 1), grid=(9, 5))
    a = restrict(s, (0, 1, 0, 1))
    b = restrict(s, (1, 2, 0, 1))
    b.coeffs += 0.1 * np.cos(np.arange(len(b)))
    a2, b2 = stitch_c1(a, b)
    gaps = edge_gap(a2, b2, order=1)
    scale = np.max(np.abs(evaluate(a2, np.full(1000, 1.0),
                                   np.linspace(0, 1, 1000), order=1)), axis=0)
    assert gaps[0] < 1e-10
    assert gaps[1] < 1e-7 * max(scale[1], 1.0)
    assert gaps[2] < 1e-7 * max(scale[2], 1.0)


def test_stitch_axis1():
    s = random_refined_surface(23, domain=(0, 1, 0, 2), grid=(5, 9))
    a = restrict(s, (0, 1, 0, 1))
    b = restrict(s, (0, 1, 1, 2))
    b.coeffs += 0.1 * np.sin(np.arange(len(b)))
    assert edge_gap(a, b, axis=1) > 1e-3
    a2, b2 = stitch_c1(a, b, axis=1)
    gaps = edge_gap(a2, b2, axis=1, order=1)
    assert gaps[0] < 1e-10
    assert max(gaps[1:]) < 1e-7 * 10


def test_stitch_rejects_mismatched_pairs():
    a = make_tensor_surface((0, 1, 0, 1), (2, 2), (4, 4))
    with pytest.raises(ValueError, match="boundary"):
        stitch_c0(a, make_tensor_surface((2, 3, 0, 1), (2, 2), (4, 4)))
    with pytest.raises(ValueError, match="degree"):
        stitch_c0(a, make_tensor_surface((1, 2, 0, 1), (3, 3), (4, 4)))
    with pytest.raises(ValueError, match="span"):
        stitch_c0(a, make_tensor_surface((1, 2, 0, 2), (2, 2), (4, 4)))


def test_stitch_weights_pull_toward_heavier_side():
    s = random_refined_surface(29, domain=(0, 2, 0, 1), grid=(9, 5))
    a = restrict(s, (0, 1, 0, 1))
    b = restrict(s, (1, 2, 0, 1))
    b.coeffs += 0.2
    t = np.linspace(0, 1, 200)
    ea = evaluate(a, np.full(200, 1.0), t)
    a2, b2 = stitch_c0(a, b, weights=(1e9, 1.0))
    # with a dominant left weight the shared curve is the left trace
    assert np.max(np.abs(evaluate(a2, np.full(200, 1.0), t) - ea)) < 1e-6
    assert edge_gap(a2, b2) < 1e-10


# -- grid stitching -------------------------------------------------------


def grid_fits(seed, c1_noise=0.1):
    s = random_refined_surface(seed, domain=(0, 2, 0, 2), grid=(9, 9))
    rng = np.random.default_rng(seed + 1)
    fits = []
    for iy in range(2):
        for ix in range(2):
            r = restrict(s, (ix, ix + 1, iy, iy + 1))
            r.coeffs += rng.normal(0, c1_noise, len(r))
            fits.append(TileFit(Tile(ix, iy, r.domain, r.domain), r,
                                n_points=100 * (1 + ix + 2 * iy)))
    return fits


def test_grid_c0_closes_all_edges():
    S = stitch_grid(grid_fits(5), (2, 2))
    assert edge_gap(S[0], S[1]) < 1e-10
    assert edge_gap(S[2], S[3]) < 1e-10
    assert edge_gap(S[0], S[2], axis=1) < 1e-10
    assert edge_gap(S[1], S[3], axis=1) < 1e-10
    # the four corner values coincide too
    vals = [evaluate(s, [1.0], [1.0])[0] for s in S]
    assert np.ptp(vals) < 1e-12


def test_grid_c1_closes_derivatives_through_corner():
    S = stitch_grid(grid_fits(13), (2, 2), c1=True)
    scale = max(np.max(np.abs(evaluate(s, np.linspace(*s.domain[:2], 40),
                                       np.linspace(*s.domain[2:], 40),
                                       order=1)[:, 1:])) for s in S)
    for a, b, axis in [(S[0], S[1], 0), (S[2], S[3], 0),
                       (S[0], S[2], 1), (S[1], S[3], 1)]:
        gaps = edge_gap(a, b, axis=axis, order=1)
        assert gaps[0] < 1e-10
        assert max(gaps[1:]) < 1e-7 * scale
    # sampling right up against the corner catches window bookkeeping slips
    eps = np.array([1e-9, 1e-6, 1e-3])
    for a, b, yy in [(S[0], S[1], 1.0 - eps), (S[2], S[3], 1.0 + eps)]:
        ga = evaluate(a, np.full(3, 1.0), yy, order=1)
        gb = evaluate(b, np.full(3, 1.0), yy, order=1)
        assert np.max(np.abs(ga - gb)) < 1e-7 * scale


def test_grid_stitch_is_deterministic():
    r1 = stitch_grid(grid_fits(31), (2, 2), c1=True)
    r2 = stitch_grid(grid_fits(31), (2, 2), c1=True)
    for a, b in zip(r1, r2):
        assert np.array_equal(a.coeffs, b.coeffs)


def test_grid_with_hole_stitches_remaining_edges():
    fits = grid_fits(17)
    fits[3] = TileFit(fits[3].tile, None)
    S = stitch_grid(fits, (2, 2), c1=True)
    assert S[3] is None
    assert edge_gap(S[0], S[1]) < 1e-10
    assert edge_gap(S[0], S[2], axis=1) < 1e-10


def test_grid_count_mismatch_raises():
    with pytest.raises(ValueError):
        stitch_grid(grid_fits(5), (3, 2))


# -- manifest -------------------------------------------------------------


def test_manifest_round_trip(tmp_path, rng):
    bbox = (0, 10, 0, 10)
    tiles = make_tiles(bbox, (2, 1))
    pts = plane_points(rng, bbox)
    fits = fit_tiles(pts, tiles, FitConfig(tolerance=1e-6, max_iterations=1))
    path = tmp_path / "tiles.json"
    write_manifest(path, tiles, (2, 1), 0.05, ["a.lrs", "b.lrs"], fits)
    m = read_manifest(path)
    assert m["counts"] == [2, 1]
    assert m["overlap"] == 0.05
    assert [t["surface"] for t in m["tiles"]] == ["a.lrs", "b.lrs"]
    assert m["tiles"][0]["core"] == list(tiles[0].core)
    assert m["tiles"][0]["n_points"] == fits[0].n_points
    assert m["tiles"][0]["report"][-1]["coefficients"] > 0
    # stable serialization: a rewrite is byte-identical
    first = path.read_bytes()
    write_manifest(path, tiles, (2, 1), 0.05, ["a.lrs", "b.lrs"], fits)
    assert path.read_bytes() == first


def test_manifest_missing_key_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"bbox": [0, 1, 0, 1], "counts": [1, 1]}))
    with pytest.raises(ValueError, match="tiles"):
        read_manifest(path)


# -- whole-pipeline comparison -------------------------------------------


def test_tiled_fit_matches_untiled_accuracy():
    # same benchmark, same budget: the per-tile out-of-tolerance total must
    # track the untiled fit to within 1% of the point count
    pts, tau = benchmark_points(30_000, seed=17)
    cfg = FitConfig(tolerance=tau, max_iterations=4, initial_grid=(8, 8))
    _, reports, _ = fit(pts, cfg)
    untiled_out = reports[-1].n_out

    bbox = (0, 100, 0, 100)
    fits = fit_tiles(pts, make_tiles(bbox, (2, 2)), cfg)
    ix, iy = tile_index(bbox, (2, 2), pts[:, 0], pts[:, 1])
    tiled_out = 0
    for k, f in enumerate(fits):
        sel = (ix + 2 * iy) == k
        status = distance_field(f.surface, pts[sel], tau)["status"]
        tiled_out += int((np.abs(status) == 1).sum())
    assert untiled_out > 0  # budget chosen so the comparison is not 0 == 0
    assert abs(tiled_out - untiled_out) <= 0.01 * len(pts)
