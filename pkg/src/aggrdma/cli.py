"""Command-line front end.

Subcommands: classify, gen, shuffle, dma, crossover, mfdma, regress,
pipeline and replay.  Every output carries a metadata preamble (tool
version, resolved configuration, digests) and the argument vector needed
to regenerate it with ``replay``.  The default seed comes from the
``AGGRDMA_SEED`` environment variable (0 when unset).
"""
import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, io, mfdma, orderflow, regression, scalingfit, synth
from .dma import DmaConfig, f2_curve, segment_table
from .errors import AggrDmaError

SEED_ENV = "AGGRDMA_SEED"


def default_seed():
    text = os.environ.get(SEED_ENV, "0")
    try:
        return int(text)
    except ValueError:
        raise AggrDmaError("invalid-config", f"{SEED_ENV}={text!r} is not an integer") from None


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _add_output(p):
    p.add_argument("-o", "--output", default="-", help="output path ('-' for stdout)")


def _add_format(p):
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def _add_dma(p):
    g = p.add_argument_group("DMA")
    g.add_argument("--theta", type=float, default=0.5, help="window position: 0 backward, 0.5 centred, 1 forward")
    g.add_argument("--s-min", type=int, default=10)
    g.add_argument("--s-max", type=int, default=None, help="largest scale (default N/10)")
    g.add_argument("--n-scales", type=int, default=40)
    g.add_argument("--scales", type=_int_list, default=None, help="explicit comma-separated scales")
    g.add_argument(
        "--odd-scales", choices=("auto", "yes", "no"), default="auto",
        help="restrict the default grid to odd sizes (auto: only for theta=0.5)",
    )


def _add_qgrid(p):
    g = p.add_argument_group("q grid")
    g.add_argument("--q", type=_float_list, default=None, help="explicit comma-separated q values")
    g.add_argument("--q-min", type=float, default=-10.0)
    g.add_argument("--q-max", type=float, default=10.0)
    g.add_argument("--q-step", type=float, default=0.5)


def _add_fit_range(p):
    p.add_argument("--fit-min", type=float, default=None, help="smallest scale in the fit")
    p.add_argument("--fit-max", type=float, default=None, help="largest scale in the fit")


def build_parser():
    ap = argparse.ArgumentParser(prog="aggrdma", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"aggrdma {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="order events -> aggressiveness series")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--stock-id", default=None)
    p.add_argument("--with-seq", action="store_true", help="write seq,a pairs")
    _add_output(p)

    p = sub.add_parser("gen", help="synthetic series")
    p.add_argument("--kind", choices=synth.KINDS, required=True)
    p.add_argument("--N", type=int, default=2**17)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--H", type=float, default=None)
    p.add_argument("--p", type=float, default=None)
    p.add_argument("--levels", type=int, default=None)
    p.add_argument("--amplitude", type=float, default=None)
    p.add_argument("--randomized", action="store_true", help="cascade: swap fractions at random")
    _add_output(p)

    p = sub.add_parser("shuffle", help="random permutation surrogate")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--seed", type=int, default=None)
    _add_output(p)

    p = sub.add_parser("dma", help="series -> F2(s) curve")
    p.add_argument("-i", "--input", required=True)
    _add_dma(p)
    _add_format(p)
    _add_output(p)

    p = sub.add_parser("crossover", help="curves -> H1, H2, s_cross table")
    p.add_argument("-i", "--input", required=True, nargs="+")
    p.add_argument("--code", nargs="+", default=None, help="row labels (default from curve files)")
    _add_fit_range(p)
    _add_format(p)
    _add_output(p)

    p = sub.add_parser("mfdma", help="series -> h(q), tau, alpha, f table")
    p.add_argument("-i", "--input", required=True)
    _add_dma(p)
    _add_qgrid(p)
    _add_fit_range(p)
    p.add_argument("--curves", default=None, help="also write per-q curves (q,s,F) here")
    _add_format(p)
    _add_output(p)

    p = sub.add_parser("regress", help="stepwise OLS")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--response", default="response")
    p.add_argument("--p-enter", type=float, default=0.05)
    p.add_argument("--p-remove", type=float, default=0.10)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--all", action="store_true", help="plain OLS on every column")
    _add_output(p)

    p = sub.add_parser("pipeline", help="events or series -> summary table")
    p.add_argument("-i", "--input", required=True, nargs="+")
    p.add_argument("--outdir", default=None, help="write intermediate series, curves and spectra")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-mfdma", action="store_true")
    _add_dma(p)
    _add_qgrid(p)
    _add_format(p)
    _add_output(p)

    p = sub.add_parser("replay", help="re-run the command recorded in an output file")
    p.add_argument("file")
    p.add_argument("-o", "--output", default=None, help="write here instead of the recorded path")
    return ap


def dma_config(args):
    odd = {"auto": None, "yes": True, "no": False}[args.odd_scales]
    return DmaConfig(
        theta=args.theta,
        s_min=args.s_min,
        s_max=args.s_max,
        n_scales=args.n_scales,
        scales=tuple(args.scales) if args.scales else None,
        odd_scales=odd,
    )


def qgrid(args):
    if args.q:
        return mfdma.check_qgrid(args.q)
    if args.q_step <= 0 or args.q_max < args.q_min:
        raise AggrDmaError("invalid-qgrid", "need q-min <= q-max and q-step > 0")
    return mfdma.check_qgrid(mfdma.default_qgrid(args.q_min, args.q_max, args.q_step))


def _fit_range(args):
    if args.fit_min is None and args.fit_max is None:
        return None
    return (args.fit_min, args.fit_max)


def _recorded_argv(argv, args):
    # output location is not part of the result; seeds are made explicit
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok in ("-o", "--output"):
            skip = True
            continue
        if tok.startswith("--output="):
            continue
        out.append(tok)
    if hasattr(args, "seed") and not any(t == "--seed" or t.startswith("--seed=") for t in out):
        out += ["--seed", str(args.seed)]
    return out


def _code_for(path, meta):
    sid = meta.get("stock_id") if isinstance(meta, dict) else None
    if sid not in (None, ""):
        return str(sid)
    name = Path(path).name
    for suffix in (".curve.csv", ".series.csv", ".events.csv", ".csv"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(path).stem


def _series_input(path):
    values = io.read_series(path)
    meta = io.read_preamble(path)
    return values, meta


def _fit_record(curve, fit_range=None):
    fit = scalingfit.fit_crossover(curve, fit_range)
    return fit, scalingfit.detect_outlier_no_crossover(fit)


def cmd_classify(args, rec):
    events, pre = orderflow.read_events(args.input)
    stock_id = args.stock_id or pre.get("stock_id") or _code_for(args.input, {})
    series = orderflow.build_series(events, stock_id)
    config = {"stock_id": stock_id, "with_seq": args.with_seq}
    meta = io.base_meta("classify", config, [args.input], rec)
    meta["stock_id"] = stock_id
    if "tick_size" in pre:
        meta["tick_size"] = pre["tick_size"]
    meta["classification"] = series.metadata
    seq = series.seq if args.with_seq else None
    io.write_series(args.output, series.values, meta, column="a", seq=seq)


def cmd_gen(args, rec):
    spec = synth.GeneratorSpec(
        kind=args.kind,
        N=args.N,
        seed=args.seed,
        H=args.H,
        p=args.p,
        levels=args.levels,
        amplitude=args.amplitude,
        deterministic=not args.randomized,
    )
    x = synth.generate(spec)
    meta = io.base_meta("gen", spec.as_dict(), (), rec)
    meta["rng"] = "numpy PCG64"
    io.write_series(args.output, x, meta, column="x")


def cmd_shuffle(args, rec):
    x, pre = _series_input(args.input)
    meta = io.base_meta("shuffle", {"seed": args.seed}, [args.input], rec)
    if "stock_id" in pre:
        meta["stock_id"] = pre["stock_id"]
    meta["rng"] = "numpy PCG64"
    io.write_series(args.output, synth.shuffle(x, args.seed), meta, column="x")


def cmd_dma(args, rec):
    cfg = dma_config(args)
    x, pre = _series_input(args.input)
    curve = f2_curve(x, cfg)
    fit = scalingfit.fit_single_powerlaw(curve)
    config = cfg.as_dict()
    meta = io.base_meta("dma", config, [args.input], rec)
    meta["stock_id"] = _code_for(args.input, pre)
    meta["grid"] = [int(s) for s in cfg.scale_grid(len(x))]
    meta["H"] = fit.H
    if curve.dropped:
        meta["dropped_scales"] = list(curve.dropped)
    if args.format == "json":
        obj = {"meta": meta, "s": curve.s, "F": curve.F, "se": curve.se,
               "fit": {"H": fit.H, "c": fit.c, "r2": fit.r2}}
        io.write_atomic(args.output, io.dumps(obj))
    else:
        io.write_curve(args.output, curve, meta)


def cmd_crossover(args, rec):
    if args.code is not None and len(args.code) != len(args.input):
        raise AggrDmaError("invalid-config", "give one --code per input")
    fr = _fit_range(args)
    fits, flags, codes = [], [], []
    for i, path in enumerate(args.input):
        curve, pre = io.read_curve(path)
        fit, flag = _fit_record(curve, fr)
        fits.append(fit)
        flags.append(flag)
        codes.append(args.code[i] if args.code else _code_for(path, pre))
    config = {"fit_range": fr, "codes": codes}
    meta = io.base_meta("crossover", config, args.input, rec)
    if args.format == "json":
        io.write_atomic(args.output, io.dumps({"meta": meta, "rows": io.table_records(fits, codes, flags)}))
    else:
        io.write_atomic(args.output, io.preamble(meta) + io.emit_table(fits, codes, flags))


def _mf_meta(command, cfg, q, fr, inputs, rec, N):
    config = cfg.as_dict()
    config["qgrid"] = q
    config["fit_range"] = fr
    meta = io.base_meta(command, config, inputs, rec)
    meta["grid"] = [int(s) for s in cfg.scale_grid(N)]
    return meta


def cmd_mfdma(args, rec):
    cfg = dma_config(args)
    q = qgrid(args)
    fr = _fit_range(args)
    x, pre = _series_input(args.input)
    res = mfdma.mfdma(x, cfg, q, fr)
    meta = _mf_meta("mfdma", cfg, q, fr, [args.input], rec, len(x))
    meta["stock_id"] = _code_for(args.input, pre)
    meta["fit_range_used"] = list(res.fit_range)
    if q.size >= 3:
        meta["summary"] = mfdma.spectrum_summary(res)
    if args.curves:
        io.write_atomic(args.curves, io.fq_curves_text(res.curves, meta))
    if args.format == "json":
        obj = {"meta": meta, "q": res.q, "h": res.h, "tau": res.tau, "alpha": res.alpha,
               "f": res.f, "r2": res.per_q_r2}
        io.write_atomic(args.output, io.dumps(obj))
    else:
        io.write_atomic(args.output, io.mf_table_text(res, meta))


def cmd_regress(args, rec):
    design = regression.read_design(args.input, args.response)
    if args.all:
        d = design.standardized() if args.standardize else design
        res = regression.ols_fit(d)
    else:
        res = regression.stepwise_select(design, args.p_enter, args.p_remove, args.standardize)
    config = {"response": args.response, "p_enter": args.p_enter, "p_remove": args.p_remove,
              "standardize": args.standardize, "all": args.all}
    meta = io.base_meta("regress", config, [args.input], rec)
    out = {"meta": meta}
    out.update(res.as_dict())
    io.write_atomic(args.output, io.dumps(out))


def _is_event_file(path):
    for _, line in io._data_lines(path):
        return tuple(c.strip() for c in line.split(",")) == orderflow.CSV_COLUMNS
    return False


def pipeline_one(path, cfg, q, outdir, do_mf):
    """orderflow -> dma -> scalingfit -> mfdma for one input file."""
    try:
        return _pipeline_one(path, cfg, q, outdir, do_mf)
    except AggrDmaError as exc:
        raise AggrDmaError(exc.code, f"{path}: {exc.detail}") from None


def _pipeline_one(path, cfg, q, outdir, do_mf):
    if _is_event_file(path):
        events, pre = orderflow.read_events(path)
        code = pre.get("stock_id") or _code_for(path, {})
        series = orderflow.build_series(events, code)
        x = series.values
        class_meta = series.metadata
    else:
        x, pre = _series_input(path)
        code = _code_for(path, pre)
        class_meta = None
    table = segment_table(x, cfg)
    curve = mfdma.fq_curve(table, cfg, 2.0)
    fit, flag = _fit_record(curve)
    extra = {"N": int(len(x))}
    if class_meta is not None:
        extra["classification"] = class_meta
    res = None
    if do_mf:
        try:
            res = mfdma.mfdma(table, cfg, q)
            extra["mfdma"] = mfdma.spectrum_summary(res) if q.size >= 3 else {}
            extra["mfdma"]["fit_range"] = list(res.fit_range)
        except AggrDmaError as exc:
            extra["mfdma"] = {"error": str(exc)}
    if outdir:
        base = Path(outdir) / code
        meta = {"stock_id": code, "source": str(path)}
        io.write_series(f"{base}.series.csv", x, meta)
        io.write_curve(f"{base}.curve.csv", curve, meta)
        if res is not None:
            io.write_atomic(f"{base}.mfdma.csv", io.mf_table_text(res, meta))
    return code, fit, flag, extra


def cmd_pipeline(args, rec):
    cfg = dma_config(args)
    q = qgrid(args)
    if args.jobs < 1:
        raise AggrDmaError("invalid-config", "--jobs must be >= 1")
    for path in args.input:
        if not os.path.exists(path):
            raise AggrDmaError("missing-input", str(path))
    work = [(p, cfg, q, args.outdir, not args.no_mfdma) for p in args.input]
    if args.jobs == 1 or len(work) == 1:
        results = [pipeline_one(*w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(pipeline_one, *zip(*work)))
    codes = [r[0] for r in results]
    fits = [r[1] for r in results]
    flags = [r[2] for r in results]
    config = cfg.as_dict()
    config["qgrid"] = q
    config["mfdma"] = not args.no_mfdma
    meta = io.base_meta("pipeline", config, args.input, rec)
    if args.format == "json":
        rows = io.table_records(fits, codes, flags, [r[3] for r in results])
        io.write_atomic(args.output, io.dumps({"meta": meta, "rows": rows}))
    else:
        io.write_atomic(args.output, io.preamble(meta) + io.emit_table(fits, codes, flags))


def _replay_argv(path):
    if not os.path.exists(path):
        raise AggrDmaError("missing-input", str(path))
    with open(path) as fh:
        head = fh.read(1)
    if head in ("{", "["):
        import json

        with open(path) as fh:
            meta = json.load(fh).get("meta", {})
    else:
        meta = io.read_preamble(path)
    argv = meta.get("argv")
    if not isinstance(argv, list):
        raise AggrDmaError("parse-error", f"{path}: no recorded argv in metadata")
    return argv


def cmd_replay(args, rec):
    argv = _replay_argv(args.file)
    return main(argv + ["--output", args.output or args.file])


COMMANDS = {
    "classify": cmd_classify,
    "gen": cmd_gen,
    "shuffle": cmd_shuffle,
    "dma": cmd_dma,
    "crossover": cmd_crossover,
    "mfdma": cmd_mfdma,
    "regress": cmd_regress,
    "pipeline": cmd_pipeline,
    "replay": cmd_replay,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "seed", "absent") is None:
            args.seed = default_seed()
        for attr in ("input",):
            paths = getattr(args, attr, None)
            for p in [paths] if isinstance(paths, str) else paths or []:
                if not os.path.exists(p):
                    raise AggrDmaError("missing-input", str(p))
        rc = COMMANDS[args.command](args, _recorded_argv(argv, args))
        return rc or 0
    except AggrDmaError as exc:
        print(f"aggrdma {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"aggrdma {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except np.linalg.LinAlgError as exc:
        print(f"aggrdma {args.command}: error: numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
