import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggrdma import dma, io, synth
from aggrdma.dma import FluctuationCurve
from aggrdma.errors import AggrDmaError
from aggrdma.scalingfit import CrossoverFit, PowerLawFit


def make_fit(H1, H2, sx, O, H=0.7):
    single = PowerLawFit(H=H, c=0.0, r2=1.0, s_lo=10, s_hi=1000, n=20, rss=0.0)
    return CrossoverFit(H1=H1, H2=H2, s_cross=sx, c1=0.0, c2=0.0, O_min=O, n=20, single=single)


def test_emit_table_rows():
    fits = [make_fit(0.52812, 0.92561, 115.22812, 0.01749), make_fit(0.77, 0.78, 50.0, 0.001, H=0.7749)]
    text = io.emit_table(fits, ["000001", "000720"], [False, True])
    assert text == "code,H1,H2,s_cross,O_min\n000001,0.528,0.926,115.228,0.017\n000720,/,0.775,/,/\n"


def test_emit_table_uses_detector_by_default():
    # |H1 - H2| below 0.05 is always crossover-free
    text = io.emit_table([make_fit(0.70, 0.72, 80.0, 0.0, H=0.71)], ["x"])
    assert text.splitlines()[1] == "x,/,0.710,/,/"


def test_emit_table_empty_and_mismatch():
    assert io.emit_table([], []) == "code,H1,H2,s_cross,O_min\n"
    with pytest.raises(AggrDmaError):
        io.emit_table([make_fit(0.5, 0.9, 100.0, 0.0)], [])


def test_table_json_full_precision():
    import json

    rows = json.loads(io.emit_table_json([make_fit(0.52812, 0.92561, 115.22812, 0.01749)], ["a"], [False]))
    assert rows[0]["H1"] == 0.52812 and rows[0]["no_crossover"] is False


def test_preamble_roundtrip(tmp_path):
    meta = {"stock_id": "000001", "seed": 7, "config": {"theta": 0.5, "scales": [11, 13]}, "note": "a=b"}
    path = tmp_path / "x.csv"
    io.write_atomic(path, io.preamble(meta) + "a\n1\n")
    assert io.read_preamble(path) == meta


def test_preamble_bare_strings(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("#tick_size=0.01\n# name=abc def\na\n1\n")
    assert io.read_preamble(path) == {"tick_size": 0.01, "name": "abc def"}


def test_config_digest_order_independent():
    assert io.digest_config({"a": 1, "b": [1, 2]}) == io.digest_config({"b": [1, 2], "a": 1})
    assert io.digest_config({"a": 1}) != io.digest_config({"a": 2})


def test_base_meta_digests_inputs(tmp_path):
    path = tmp_path / "in.csv"
    path.write_bytes(b"a\n1\n")
    meta = io.base_meta("dma", {"theta": 0.5}, [path], argv=["dma", str(path)])
    assert meta["input_sha256"] == io.digest_bytes(b"a\n1\n")
    assert meta["argv"] == ["dma", str(path)]


def test_write_atomic_replaces_and_leaves_no_temp(tmp_path):
    path = tmp_path / "sub" / "out.csv"
    io.write_atomic(path, "one\n")
    io.write_atomic(path, "two\n")
    assert path.read_text() == "two\n"
    assert os.listdir(path.parent) == ["out.csv"]


def test_write_atomic_stdout(capsys):
    io.write_atomic("-", "hello\n")
    assert capsys.readouterr().out == "hello\n"


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=50))
def test_float_series_roundtrip_bit_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("s") / "s.csv"
    x = np.asarray(values, dtype=float)
    io.write_series(path, x, {"k": 1})
    y = io.read_series(path)
    assert y.dtype == np.float64 and np.array_equal(x.view(np.int64), y.view(np.int64))


def test_int_series_roundtrip(tmp_path):
    path = tmp_path / "s.csv"
    a = np.array([5, -4, -3, 1], dtype=np.int64)
    io.write_series(path, a, seq=[10, 11, 12, 13])
    assert path.read_text() == "seq,a\n10,5\n11,-4\n12,-3\n13,1\n"
    y = io.read_series(path)
    assert y.dtype == np.int64 and y.tolist() == a.tolist()


def test_curve_roundtrip(tmp_path):
    c = dma.f2_curve(synth.gen_fgn(0.7, 5000, 1))
    path = tmp_path / "c.csv"
    io.write_curve(path, c, {"config": {"theta": 0.5, "q": 2.0}})
    back, meta = io.read_curve(path)
    assert np.array_equal(back.s, c.s) and np.array_equal(back.F, c.F)
    assert np.array_equal(back.se, c.se) and back.theta == 0.5


def test_curve_without_se(tmp_path):
    path = tmp_path / "c.csv"
    io.write_curve(path, FluctuationCurve(s=[11, 13], F=[1.5, 2.0]))
    assert path.read_text() == "s,F\n11,1.5\n13,2.0\n"
    back, _ = io.read_curve(path)
    assert back.se is None


@pytest.mark.parametrize(
    "body,code,msg",
    [
        ("a\n1\nx\n", "parse-error", "line 3"),
        ("seq,a\n1,2\n3\n", "parse-error", "line 3"),
        ("a\n", "empty-series", "no data rows"),
    ],
)
def test_read_series_errors(tmp_path, body, code, msg):
    path = tmp_path / "s.csv"
    path.write_text(body)
    with pytest.raises(AggrDmaError) as e:
        io.read_series(path)
    assert e.value.code == code and msg in str(e.value)


def test_read_curve_errors(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("x,y\n1,2\n")
    with pytest.raises(AggrDmaError):
        io.read_curve(path)
    path.write_text("s,F\n11,1.0\n13\n")
    with pytest.raises(AggrDmaError) as e:
        io.read_curve(path)
    assert "line 3" in str(e.value)


def test_fmt_float_shortest_repr():
    assert io.fmt_float(0.1) == "0.1" and io.fmt_float(np.float64(1e-300)) == "1e-300"
    assert io.fmt_float(float("nan")) == "nan"
