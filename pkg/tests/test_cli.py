import json
import subprocess
import sys

import numpy as np
import pytest

from aggrdma import dma, io, mfdma, scalingfit
from aggrdma.cli import main

EVENTS = (
    "#stock_id=000001\n#tick_size=0.01\n"
    "seq,side,price_ticks,quantity,kind,order_id,phase\n"
    "1,buy,99,40,submit,b1,continuous\n"
    "2,sell,101,50,submit,a1,continuous\n"
    "3,buy,102,80,submit,b2,continuous\n"
    "4,sell,99,40,submit,,continuous\n"
    "5,sell,100,10,submit,,continuous\n"
)


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def fgn_file(tmp_path):
    path = tmp_path / "fgn.series.csv"
    assert run("gen", "--kind", "fgn", "--H", 0.8, "--N", 2**15, "--seed", 7, "-o", path) == 0
    return path


def test_gen_dma_crossover_chain(tmp_path, fgn_file):
    curve = tmp_path / "fgn.curve.csv"
    table = tmp_path / "table.csv"
    assert run("dma", "-i", fgn_file, "-o", curve) == 0
    assert run("crossover", "-i", curve, "-o", table) == 0
    rows = [ln for ln in table.read_text().splitlines() if not ln.startswith("#")]
    assert rows[0] == io.TABLE_HEADER
    code, H1, H2, sx, O = rows[1].split(",")
    assert code == "fgn" and H1 == "/" and sx == "/"
    assert abs(float(H2) - 0.8) <= 0.05
    # same numbers as the library calls
    x = io.read_series(fgn_file)
    fit = scalingfit.fit_crossover(dma.f2_curve(x))
    assert H2 == f"{fit.single.H:.3f}"


def test_output_preamble(fgn_file, tmp_path):
    curve = tmp_path / "c.csv"
    run("dma", "-i", fgn_file, "--theta", 0.0, "-o", curve)
    meta = io.read_preamble(curve)
    assert meta["command"] == "dma" and meta["config"]["theta"] == 0.0
    assert meta["config_sha256"] == io.digest_config(meta["config"])
    assert meta["input_sha256"] == io.digest_file(fgn_file)
    assert meta["tool"].startswith("aggrdma ")
    assert "-o" not in meta["argv"]


def test_mfdma_q2_equals_dma(fgn_file, tmp_path):
    curves = tmp_path / "fq.csv"
    curve = tmp_path / "c.csv"
    run("dma", "-i", fgn_file, "-o", curve)
    assert run("mfdma", "-i", fgn_file, "--q=-2,0,2,4", "--curves", curves, "-o", tmp_path / "mf.csv") == 0
    ref, _ = io.read_curve(curve)
    rows = [ln.split(",") for ln in curves.read_text().splitlines() if ln.startswith("2.0,")]
    F2 = np.array([float(r[2]) for r in rows])
    assert np.array_equal(F2, ref.F)


def test_mfdma_json(fgn_file, tmp_path):
    out = tmp_path / "mf.json"
    assert run("mfdma", "-i", fgn_file, "--q-min", -2, "--q-max", 2, "--q-step", 1, "--format", "json", "-o", out) == 0
    obj = json.loads(out.read_text())
    assert obj["q"] == [-2.0, -1.0, 0.0, 1.0, 2.0]
    assert "delta_alpha" in obj["meta"]["summary"]


def test_replay_bit_identical(tmp_path, fgn_file):
    curve = tmp_path / "c.csv"
    run("dma", "-i", fgn_file, "--n-scales", 20, "-o", curve)
    again = tmp_path / "again.csv"
    assert run("replay", curve, "-o", again) == 0
    assert again.read_bytes() == curve.read_bytes()
    assert run("replay", fgn_file, "-o", tmp_path / "g.csv") == 0
    assert (tmp_path / "g.csv").read_bytes() == fgn_file.read_bytes()


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("AGGRDMA_SEED", "11")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("gen", "--kind", "white", "--N", 100, "-o", a)
    run("gen", "--kind", "white", "--N", 100, "--seed", 11, "-o", b)
    assert np.array_equal(io.read_series(a), io.read_series(b))
    assert io.read_preamble(a)["argv"][-2:] == ["--seed", "11"]
    monkeypatch.setenv("AGGRDMA_SEED", "x")
    assert run("gen", "--kind", "white", "--N", 100, "-o", a) == 1


def test_malformed_series_names_row(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a\n1\n2\nthree\n4\n")
    assert run("dma", "-i", bad) == 1
    err = capsys.readouterr().err
    assert "parse-error" in err and "line 4" in err


def test_missing_input(tmp_path, capsys):
    assert run("dma", "-i", tmp_path / "nope.csv") == 1
    assert "missing-input" in capsys.readouterr().err


def test_classify(tmp_path):
    ev = tmp_path / "x.events.csv"
    ev.write_text(EVENTS)
    out = tmp_path / "a.csv"
    assert run("classify", "-i", ev, "--with-seq", "-o", out) == 0
    assert io.read_series(out).tolist() == [3, -3, 5, -4, -3]
    meta = io.read_preamble(out)
    assert meta["stock_id"] == "000001" and meta["tick_size"] == 0.01


def test_classify_unknown_cancel(tmp_path, capsys):
    ev = tmp_path / "x.csv"
    ev.write_text(EVENTS + "6,buy,,,cancel,zz,continuous\n")
    assert run("classify", "-i", ev) == 1
    err = capsys.readouterr().err
    assert "unknown-order" in err and "seq 6" in err


def test_shuffle_preserves_multiset(fgn_file, tmp_path):
    out = tmp_path / "s.csv"
    assert run("shuffle", "-i", fgn_file, "--seed", 2, "-o", out) == 0
    assert np.array_equal(np.sort(io.read_series(out)), np.sort(io.read_series(fgn_file)))


def test_regress(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((80, 3))
    y = 1 + 2 * X[:, 1] + 0.1 * rng.standard_normal(80)
    path = tmp_path / "d.csv"
    path.write_text("H,a,b,c\n" + "".join(f"{v},{r[0]},{r[1]},{r[2]}\n" for v, r in zip(y, X)))
    out = tmp_path / "r.json"
    assert run("regress", "-i", path, "--response", "H", "-o", out) == 0
    obj = json.loads(out.read_text())
    assert obj["selected"] == ["b"] and abs(obj["beta"]["b"] - 2) < 0.05


def test_pipeline_matches_manual_chain(tmp_path):
    paths = []
    for i, H in enumerate((0.6, 0.8)):
        p = tmp_path / f"s{i}.series.csv"
        run("gen", "--kind", "fgn", "--H", H, "--N", 2**14, "--seed", i, "-o", p)
        paths.append(p)
    manual = []
    for p in paths:
        c = tmp_path / (p.name.replace(".series", ".curve"))
        run("dma", "-i", p, "-o", c)
        manual.append(c)
    ref = tmp_path / "ref.csv"
    run("crossover", "-i", *manual, "-o", ref)
    out1, out2 = tmp_path / "p1.csv", tmp_path / "p2.csv"
    assert run("pipeline", "-i", *paths, "--no-mfdma", "-o", out1) == 0
    assert run("pipeline", "-i", *paths, "--no-mfdma", "--jobs", 2, "--outdir", tmp_path / "o", "-o", out2) == 0

    def body(p):
        return [ln for ln in p.read_text().splitlines() if not ln.startswith("#")]

    assert body(out1) == body(ref) == body(out2)
    assert (tmp_path / "o" / "s0.curve.csv").exists()


def test_pipeline_events_with_mfdma(tmp_path):
    rng = np.random.default_rng(3)
    lines = ["seq,side,price_ticks,quantity,kind,order_id,phase"]
    for i in range(3000):
        side = "buy" if rng.random() < 0.5 else "sell"
        lines.append(f"{i},{side},{int(rng.integers(95, 106))},{int(rng.integers(1, 20))},submit,,continuous")
    ev = tmp_path / "X.events.csv"
    ev.write_text("\n".join(lines) + "\n")
    out = tmp_path / "p.json"
    assert run("pipeline", "-i", ev, "--q=-2,-1,0,1,2", "--format", "json", "-o", out) == 0
    row = json.loads(out.read_text())["rows"][0]
    assert row["code"] == "X" and row["N"] == 3000
    assert "delta_alpha" in row["mfdma"]


def test_pipeline_bad_input_names_file(tmp_path, capsys):
    short = tmp_path / "short.csv"
    short.write_text("a\n1\n2\n3\n")
    assert run("pipeline", "-i", short) == 1
    assert str(short) in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "aggrdma", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("aggrdma ")
