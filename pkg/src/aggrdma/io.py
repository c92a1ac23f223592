"""File formats: metadata preambles, series and curve CSVs, result tables.

Every output file starts with ``# key=value`` lines recording the tool
version, the resolved configuration, and SHA-256 digests of configuration
and input, so any run can be replayed.  Floats are written with ``repr``
(shortest round-trip form) and files are replaced atomically.
"""
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .dma import FluctuationCurve
from .errors import AggrDmaError
from .scalingfit import detect_outlier_no_crossover

TABLE_HEADER = "code,H1,H2,s_cross,O_min"
NO_VALUE = "/"


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def digest_bytes(data):
    return hashlib.sha256(data).hexdigest()


def digest_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_config(config):
    return digest_bytes(canonical_json(config).encode())


def fmt_float(v):
    v = float(v)
    return repr(v) if np.isfinite(v) else str(v)


def preamble(meta):
    """Render ``meta`` as ``# key=value`` lines with JSON-encoded values."""
    out = []
    for key, value in meta.items():
        text = canonical_json(value)
        out.append(f"# {key}={text}\n")
    return "".join(out)


def base_meta(command, config, inputs=(), argv=None):
    meta = {"tool": f"aggrdma {__version__}", "command": command}
    if argv is not None:
        meta["argv"] = list(argv)
    meta["config"] = config
    meta["config_sha256"] = digest_config(config)
    digests = [digest_file(p) for p in inputs]
    if digests:
        meta["input_sha256"] = digests[0] if len(digests) == 1 else digests
    return meta


def read_preamble(path):
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, sep, value = line[1:].strip().partition("=")
            if not sep:
                continue
            try:
                meta[key.strip()] = json.loads(value)
            except json.JSONDecodeError:
                # hand-written preambles may carry bare strings
                meta[key.strip()] = value
    return meta


def write_atomic(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename; ``-`` is stdout."""
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _data_lines(path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if s and not s.startswith("#"):
                yield lineno, s


def _number(text, lineno):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        raise AggrDmaError("parse-error", f"line {lineno}: {text!r} is not a number") from None


def series_text(values, meta=None, column="a", seq=None):
    values = np.asarray(values)
    integral = np.issubdtype(values.dtype, np.integer)
    cells = [str(int(v)) for v in values] if integral else [fmt_float(v) for v in values]
    out = [preamble(meta or {})]
    if seq is None:
        out.append(column + "\n")
        out.extend(c + "\n" for c in cells)
    else:
        out.append(f"seq,{column}\n")
        out.extend(f"{int(s)},{c}\n" for s, c in zip(seq, cells))
    return "".join(out)


def write_series(path, values, meta=None, column="a", seq=None):
    write_atomic(path, series_text(values, meta, column, seq))


def read_series(path):
    """
    Read a one-column series (``seq,a`` files use their last column).

    A non-numeric first data line is taken as the header.  Returns an int64
    array when every value is integral text, float64 otherwise.
    """
    vals = []
    header_done = False
    width = None
    for lineno, line in _data_lines(path):
        cells = [c.strip() for c in line.split(",")]
        if not header_done:
            header_done = True
            width = len(cells)
            try:
                [float(c) for c in cells]
            except ValueError:
                continue
        if len(cells) != width:
            raise AggrDmaError("parse-error", f"line {lineno}: expected {width} field(s), got {len(cells)}")
        vals.append(_number(cells[-1], lineno))
    if not vals:
        raise AggrDmaError("empty-series", f"{path}: no data rows")
    if all(isinstance(v, int) for v in vals):
        return np.asarray(vals, dtype=np.int64)
    return np.asarray(vals, dtype=float)


def curve_text(curve, meta=None):
    """``s,F`` rows, plus an ``se`` column (standard error of ln F) when known."""
    out = [preamble(meta or {})]
    if curve.se is None:
        out.append("s,F\n")
        out.extend(f"{int(s)},{fmt_float(F)}\n" for s, F in zip(curve.s, curve.F))
    else:
        out.append("s,F,se\n")
        out.extend(
            f"{int(s)},{fmt_float(F)},{fmt_float(e)}\n" for s, F, e in zip(curve.s, curve.F, curve.se)
        )
    return "".join(out)


def write_curve(path, curve, meta=None):
    write_atomic(path, curve_text(curve, meta))


def read_curve(path):
    """Read a curve file.  Returns (FluctuationCurve, preamble dict)."""
    meta = read_preamble(path)
    rows = _data_lines(path)
    first = next(rows, None)
    header = None if first is None else first[1].replace(" ", "")
    if header not in ("s,F", "s,F,se"):
        raise AggrDmaError("parse-error", f"{path}: curve files need the header s,F or s,F,se")
    width = header.count(",") + 1
    cols = [[] for _ in range(width)]
    for lineno, line in rows:
        cells = line.split(",")
        if len(cells) != width:
            raise AggrDmaError("parse-error", f"line {lineno}: expected {width} fields, got {len(cells)}")
        for col, cell in zip(cols, cells):
            col.append(_number(cell, lineno))
    cfg = meta.get("config", {}) if isinstance(meta.get("config"), dict) else {}
    curve = FluctuationCurve(
        s=np.asarray(cols[0], dtype=np.int64),
        F=np.asarray(cols[1], dtype=float),
        q=float(cfg.get("q", 2.0)),
        theta=float(cfg.get("theta", 0.5)),
        se=np.asarray(cols[2], dtype=float) if width == 3 else None,
    )
    return curve, meta


def mf_table_text(result, meta=None):
    out = [preamble(meta or {}), "q,h,tau,alpha,f,r2\n"]
    for row in result.rows():
        out.append(",".join(fmt_float(v) for v in row) + "\n")
    return "".join(out)


def fq_curves_text(curves, meta=None):
    out = [preamble(meta or {}), "q,s,F\n"]
    for c in curves:
        out.extend(f"{fmt_float(c.q)},{int(s)},{fmt_float(F)}\n" for s, F in zip(c.s, c.F))
    return "".join(out)


def _f3(v):
    return f"{float(v):.3f}"


def table_row(code, fit, no_crossover=None):
    """One ``code,H1,H2,s_cross,O_min`` row; crossover-free fits get ``/`` cells."""
    if no_crossover is None:
        no_crossover = detect_outlier_no_crossover(fit)
    if no_crossover:
        return f"{code},{NO_VALUE},{_f3(fit.single.H)},{NO_VALUE},{NO_VALUE}"
    return f"{code},{_f3(fit.H1)},{_f3(fit.H2)},{_f3(fit.s_cross)},{_f3(fit.O_min)}"


def emit_table(fits, codes, flags=None):
    """CSV text of the crossover summary table, one row per fit."""
    if len(fits) != len(codes):
        raise AggrDmaError("invalid-config", "one code per fit is required")
    flags = [None] * len(fits) if flags is None else list(flags)
    lines = [TABLE_HEADER] + [table_row(c, f, nc) for c, f, nc in zip(codes, fits, flags)]
    return "\n".join(lines) + "\n"


def table_records(fits, codes, flags=None, extra=None):
    """The summary table as dicts at full precision, with fit diagnostics."""
    flags = [None] * len(fits) if flags is None else list(flags)
    rows = []
    for i, (code, fit, nc) in enumerate(zip(codes, fits, flags)):
        d = {"code": code}
        d.update(fit.as_dict())
        d["no_crossover"] = bool(detect_outlier_no_crossover(fit) if nc is None else nc)
        if extra is not None and extra[i]:
            d.update(extra[i])
        rows.append(d)
    return rows


def dumps(obj):
    return json.dumps(obj, indent=2, default=_jsonable) + "\n"


def emit_table_json(fits, codes, flags=None, extra=None):
    """JSON text of the summary table at full precision."""
    return dumps(table_records(fits, codes, flags, extra))
