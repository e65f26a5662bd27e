import json
import os

import numpy as np
import pytest

from lrterrain import evaluate, restrict
from lrterrain.benchmark import benchmark_points, benchmark_terrain
from lrterrain.cli import main
from lrterrain.config import Settings, default_dict, load_settings
from lrterrain.formats import (
    binary_size,
    read_surface,
    read_surface_binary,
    read_surface_text,
    read_survey,
    read_survey_binary,
    read_survey_text,
    write_surface_binary,
    write_surface_text,
    write_survey_binary,
    write_survey_text,
)
from conftest import random_refined_surface


def sample(surface, n=1000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(surface.domain[0], surface.domain[1], n)
    y = rng.uniform(surface.domain[2], surface.domain[3], n)
    return x, y, evaluate(surface, x, y)


# -- surface round trips ---------------------------------------------------


def test_binary_surface_round_trip_is_bit_exact(tmp_path):
    s = random_refined_surface(4)
    p = tmp_path / "s.lrs"
    write_surface_binary(s, p)
    assert p.stat().st_size == binary_size(s)
    t = read_surface_binary(p)
    x, y, z = sample(s)
    assert np.array_equal(evaluate(t, x, y), z)
    # writing the loaded surface again reproduces the file byte for byte
    p2 = tmp_path / "s2.lrs"
    write_surface_binary(t, p2)
    assert p2.read_bytes() == p.read_bytes()


def test_text_surface_round_trip(tmp_path):
    s = random_refined_surface(8, domain=(-3.0, 7.0, 2.0, 4.5))
    p = tmp_path / "s.lrs.txt"
    write_surface_text(s, p)
    t = read_surface_text(p)
    x, y, z = sample(s)
    assert np.max(np.abs(evaluate(t, x, y) - z)) < 1e-12
    assert t.degrees == s.degrees
    assert t.units == s.units


def test_restricted_surface_round_trips(tmp_path):
    # restriction leaves partial-width knot segments; those must survive
    s = restrict(random_refined_surface(15, domain=(0, 2, 0, 1), grid=(9, 5)),
                 (0.0, 1.0, 0.0, 1.0))
    p = tmp_path / "r.lrs"
    write_surface_binary(s, p)
    t = read_surface_binary(p)
    x, y, z = sample(s)
    assert np.array_equal(evaluate(t, x, y), z)
    assert len(t.mesh.segments()) == len(s.mesh.segments())


def test_surface_sniffing(tmp_path):
    s = random_refined_surface(2, n_inserts=5)
    pb, pt = tmp_path / "b.lrs", tmp_path / "t.lrs"
    write_surface_binary(s, pb)
    write_surface_text(s, pt)  # extension does not matter, content does
    x, y, z = sample(s, 50)
    assert np.array_equal(evaluate(read_surface(pb), x, y), z)
    assert np.max(np.abs(evaluate(read_surface(pt), x, y) - z)) < 1e-12


def test_binary_surface_rejects_damage(tmp_path):
    s = random_refined_surface(2, n_inserts=5)
    p = tmp_path / "s.lrs"
    write_surface_binary(s, p)
    data = p.read_bytes()
    (tmp_path / "trunc.lrs").write_bytes(data[:-9])
    with pytest.raises(ValueError, match="truncated"):
        read_surface_binary(tmp_path / "trunc.lrs")
    (tmp_path / "magic.lrs").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(ValueError, match="magic"):
        read_surface_binary(tmp_path / "magic.lrs")
    (tmp_path / "trail.lrs").write_bytes(data + b"\0")
    with pytest.raises(ValueError, match="trailing"):
        read_surface_binary(tmp_path / "trail.lrs")


# -- survey files -----------------------------------------------------------


def test_survey_text_round_trip(tmp_path, rng):
    pts = rng.normal(size=(200, 3))
    p = tmp_path / "a.xyz"
    write_survey_text(p, pts, {"id": "a", "score": "7", "date": "2001-02-03"})
    got, meta = read_survey_text(p)
    assert np.max(np.abs(got - pts)) == 0.0
    assert meta == {"id": "a", "score": "7", "date": "2001-02-03"}


def test_survey_plain_xyz_without_header(tmp_path):
    p = tmp_path / "plain.xyz"
    p.write_text("1 2 3\n4 5 6\n")
    got, meta = read_survey_text(p)
    assert got.shape == (2, 3)
    assert meta == {}


def test_survey_binary_round_trip(tmp_path, rng):
    pts = rng.normal(size=(500, 3))
    p = tmp_path / "a.bin"
    write_survey_binary(p, pts, {"id": "a", "score": 7.0})
    got, meta = read_survey_binary(p)
    assert np.array_equal(got, pts)
    assert meta == {"id": "a", "score": 7.0}
    got2, _ = read_survey(p)  # sniffed
    assert np.array_equal(got2, pts)


def test_survey_validation(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("# count 3\n1 2 3\n")
    with pytest.raises(ValueError, match="count"):
        read_survey_text(p)
    p.write_text("1 2\n")
    with pytest.raises(ValueError, match="x y z"):
        read_survey_text(p)
    p.write_text("1 2 fish\n")
    with pytest.raises(ValueError, match="bad.xyz:1"):
        read_survey_text(p)
    p.write_text("1 2 nan\n")
    with pytest.raises(ValueError, match="finite"):
        read_survey_text(p)


# -- config -----------------------------------------------------------------


def test_default_settings_match_dataclasses():
    s = load_settings()
    assert s.fit == Settings().fit
    assert s.deconflict == Settings().deconflict
    assert s.overlap == 0.05
    d = default_dict()
    assert d["fit"]["tolerance"] == 0.5
    assert d["deconflict"]["reference_level"] == 3


def test_config_file_and_override(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({
        "tolerance": 0.2,
        "fit": {"max_iterations": 3, "degrees": [3, 2]},
        "deconflict": {"alpha": 0.01},
        "tiling": {"overlap": 0.1},
    }))
    s = load_settings(p)
    assert s.fit.tolerance == 0.2 and s.deconflict.tolerance == 0.2
    assert s.fit.max_iterations == 3
    assert s.fit.degrees == (3, 2)
    assert s.deconflict.alpha == 0.01
    assert s.overlap == 0.1
    # the CLI flag outranks the file, for both sections
    s = load_settings(p, tolerance=0.7)
    assert s.fit.tolerance == 0.7 and s.deconflict.tolerance == 0.7
    # a section-local tolerance outranks the shared top-level one
    p.write_text(json.dumps({"tolerance": 0.2, "fit": {"tolerance": 0.3}}))
    s = load_settings(p)
    assert s.fit.tolerance == 0.3 and s.deconflict.tolerance == 0.2


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text('{"fitt": {}}')
    with pytest.raises(ValueError, match="fitt"):
        load_settings(p)
    p.write_text('{"fit": {"tolerence": 1}}')
    with pytest.raises(ValueError, match="tolerence"):
        load_settings(p)
    p.write_text('{"tiling": {"overlaps": 1}}')
    with pytest.raises(ValueError, match="overlaps"):
        load_settings(p)
    p.write_text("[1, 2]")
    with pytest.raises(ValueError, match="object"):
        load_settings(p)


# -- command line -------------------------------------------------------------


@pytest.fixture
def bench_file(tmp_path):
    pts, tau = benchmark_points(6000, seed=3)
    p = tmp_path / "bench.xyz"
    write_survey_text(p, pts, {"id": "bench"})
    return p, tau


def test_cli_fit_eval_cycle(bench_file, tmp_path, capsys):
    p, tau = bench_file
    out = tmp_path / "bench.lrs"
    rep = tmp_path / "report.tsv"
    code = main(["fit", str(p), "--tolerance", str(10 * tau), "--max-iter", "4",
                 "-o", str(out), "--report", str(rep)])
    assert code == 0
    table = capsys.readouterr().out
    assert "iteration" in table and "status\tconverged" in table
    assert rep.read_text().strip() in table
    final_row = [ln for ln in table.splitlines() if ln[0].isdigit()][-1]

    code = main(["eval", str(out), str(p), "--tolerance", str(10 * tau),
                 "-o", str(tmp_path / "field.txt")])
    assert code == 0
    eval_out = capsys.readouterr().out.splitlines()
    # the eval of the fit inputs reproduces the final iteration row
    assert eval_out[1] == final_row.split("\t", 1)[1]
    cols = np.loadtxt(tmp_path / "field.txt")
    assert cols.shape == (6000, 6)


def test_cli_fit_is_deterministic(bench_file, tmp_path, capsys):
    p, tau = bench_file
    a, b = tmp_path / "a.lrs", tmp_path / "b.lrs"
    assert main(["fit", str(p), "--tolerance", str(4 * tau),
                 "--max-iter", "2", "-o", str(a)]) == 0
    assert main(["fit", str(p), "--tolerance", str(4 * tau),
                 "--max-iter", "2", "-o", str(b)]) == 0
    capsys.readouterr()
    assert a.read_bytes() == b.read_bytes()


def test_cli_exit_codes(bench_file, tmp_path, capsys):
    p, tau = bench_file
    bad = tmp_path / "bad.xyz"
    bad.write_text("1 2 fish\n")
    assert main(["fit", str(bad)]) == 2
    assert "bad.xyz" in capsys.readouterr().err

    assert main(["fit", str(tmp_path / "missing.xyz")]) == 2
    assert "not found" in capsys.readouterr().err

    cfg = tmp_path / "freeze.json"
    cfg.write_text('{"fit": {"min_width_fraction": 0.5, "max_iterations": 5}}')
    out = tmp_path / "frozen.lrs"
    code = main(["fit", str(bench_file[0]), "--config", str(cfg),
                 "--tolerance", "1e-4", "-o", str(out)])
    capsys.readouterr()
    assert code == 3
    assert out.exists()  # the frozen surface is still usable output

    with pytest.raises(SystemExit) as exc:  # argparse handles unknown flags
        main(["fit", str(p), "--frobnicate"])
    assert exc.value.code == 2


def test_cli_config_typo_is_actionable(bench_file, tmp_path, capsys):
    cfg = tmp_path / "typo.json"
    cfg.write_text('{"fit": {"tolerances": 0.1}}')
    assert main(["fit", str(bench_file[0]), "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "tolerances" in err and "tolerance" in err


def test_cli_tile_and_stitch(bench_file, tmp_path, capsys):
    p, tau = bench_file
    manifest = tmp_path / "grid.json"
    code = main(["fit", str(p), "--tolerance", str(4 * tau), "--max-iter", "2",
                 "--tile", "2x2", "-o", str(manifest)])
    assert code == 0
    m = json.loads(manifest.read_text())
    assert m["counts"] == [2, 2]
    assert all(e["surface"] for e in m["tiles"])

    code = main(["stitch", str(manifest), "--c1"])
    capsys.readouterr()
    assert code == 0
    m2 = json.loads((tmp_path / "grid.stitched.json").read_text())
    S = [read_surface(tmp_path / e["surface"]) for e in m2["tiles"]]
    xs = S[0].domain[1]
    t = np.linspace(S[0].domain[2], S[0].domain[3], 500)
    gap = np.abs(evaluate(S[0], np.full(500, xs), t)
                 - evaluate(S[1], np.full(500, xs), t))
    assert gap.max() < 1e-9


def test_cli_deconflict(tmp_path, capsys):
    rng = np.random.default_rng(6)

    def survey(n, bbox, bias=0.0):
        x = rng.uniform(bbox[0], bbox[1], n)
        y = rng.uniform(bbox[2], bbox[3], n)
        z = benchmark_terrain(x, y) + bias + rng.normal(0, 0.02, n)
        return np.column_stack([x, y, z])

    new = tmp_path / "new.xyz"
    old = tmp_path / "old.xyz"
    write_survey_text(new, survey(5000, (0, 100, 0, 100)),
                      {"id": "new", "score": "8"})
    write_survey_text(old, survey(3000, (30, 70, 30, 70), bias=1.5),
                      {"id": "old", "score": "3"})
    out = tmp_path / "final.lrs"
    rep = tmp_path / "dec.json"
    code = main(["deconflict", str(new), str(old), "--tolerance", "0.35",
                 "--level", "2", "--total", "3", "-o", str(out),
                 "--report", str(rep), "--outdir", str(tmp_path / "cleaned")])
    capsys.readouterr()
    assert code == 0
    d = json.loads(rep.read_text())
    assert d["removed"]["old"] > 2700
    assert d["removed"]["new"] == 0
    kept, meta = read_survey(tmp_path / "cleaned" / "old.clean.xyz")
    assert len(kept) == d["kept"]["old"]
    assert meta["id"] == "old"
    surface = read_surface(out)  # spans the data bbox
    assert surface.domain[0] <= 0.2 and surface.domain[1] >= 99.8

    # identical rerun produces byte-identical surface and report
    out2, rep2 = tmp_path / "final2.lrs", tmp_path / "dec2.json"
    main(["deconflict", str(new), str(old), "--tolerance", "0.35",
          "--level", "2", "--total", "3", "-o", str(out2),
          "--report", str(rep2), "--outdir", str(tmp_path / "cleaned2")])
    capsys.readouterr()
    assert out2.read_bytes() == out.read_bytes()
    assert rep2.read_text() == rep.read_text()


def test_cli_report_table(bench_file, tmp_path, capsys):
    p, tau = bench_file
    out = tmp_path / "s.lrs"
    main(["fit", str(p), "--tolerance", str(4 * tau), "--max-iter", "2",
          "-o", str(out)])
    capsys.readouterr()
    assert main(["report", str(out), str(p)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split("\t") == ["survey", "points", "max_below",
                                    "max_above", "avg_dist", "z_range"]
    name, n, below, above, avg, zr = lines[1].split("\t")
    assert name == "bench" and int(n) == 6000
    assert float(below) >= 0 and float(above) >= 0
    assert float(zr) > 5
