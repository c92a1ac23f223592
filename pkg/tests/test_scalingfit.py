import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggrdma import dma, scalingfit, synth
from aggrdma.dma import FluctuationCurve
from aggrdma.errors import AggrDmaError

import oracles

GRID = np.unique(np.rint(np.geomspace(10, 10000, 40)).astype(int))


def piecewise(H1=0.5, H2=0.9, sx=100.0, scales=GRID):
    return FluctuationCurve(s=scales, F=oracles.piecewise_curve(scales, H1, H2, sx))


def test_single_powerlaw_exact():
    c = FluctuationCurve(s=[10, 100, 1000], F=[10**0.5, 10.0, 10**1.5])
    fit = scalingfit.fit_single_powerlaw(c)
    assert np.isclose(fit.H, 0.5) and abs(fit.c) < 1e-12 and np.isclose(fit.r2, 1)
    assert fit.range == (10, 1000)


def test_single_powerlaw_scale_invariance():
    c = dma.f2_curve(synth.gen_fgn(0.6, 20000, 3))
    f1 = scalingfit.fit_single_powerlaw(c)
    f2 = scalingfit.fit_single_powerlaw(FluctuationCurve(s=c.s, F=3.7 * c.F))
    assert np.isclose(f1.H, f2.H, atol=1e-12)
    assert np.isclose(f2.c - f1.c, np.log(3.7))


def test_single_powerlaw_insufficient():
    with pytest.raises(AggrDmaError) as e:
        scalingfit.fit_single_powerlaw(FluctuationCurve(s=[10, 20], F=[1, 2]))
    assert e.value.code == "insufficient-points"


def test_single_powerlaw_fgn_03():
    fit = scalingfit.fit_single_powerlaw(dma.f2_curve(synth.gen_fgn(0.3, 2**17, 5)))
    assert abs(fit.H - 0.3) <= 0.03


def test_crossover_exact_piecewise():
    fit = scalingfit.fit_crossover(piecewise())
    assert abs(fit.H1 - 0.5) < 1e-6 and abs(fit.H2 - 0.9) < 1e-6
    assert abs(fit.s_cross - 100) < 1e-6 and fit.O_min < 1e-6
    assert abs(fit.c1 + fit.H1 * np.log(fit.s_cross) - fit.c2 - fit.H2 * np.log(fit.s_cross)) < 1e-9
    assert not scalingfit.detect_outlier_no_crossover(fit)


def test_crossover_single_line_flagged():
    c = FluctuationCurve(s=GRID, F=2.0 * GRID**0.7)
    fit = scalingfit.fit_crossover(c)
    assert abs(fit.H1 - 0.7) < 1e-9 and abs(fit.H2 - 0.7) < 1e-9 and fit.O_min < 1e-20
    assert scalingfit.detect_outlier_no_crossover(fit)


def test_crossover_needs_seven_points():
    c = FluctuationCurve(s=GRID[:6], F=GRID[:6] ** 0.5)
    with pytest.raises(AggrDmaError) as e:
        scalingfit.fit_crossover(c)
    assert e.value.code == "no-admissible-crossover"


def test_objective_matches_eliminated_oracle():
    rng = np.random.default_rng(4)
    x = np.log(GRID.astype(float))
    y = 0.6 * x + 0.05 * rng.standard_normal(x.size)
    for xc in scalingfit.candidate_knots(x):
        if not scalingfit.admissible(x, xc):
            continue
        O, H1, H2, c1, c2, *_ = scalingfit.crossover_objective(x, y, xc)
        ref = oracles.constrained_two_line(x, y, xc)
        assert np.allclose((O, H1, H2, c1, c2), ref, rtol=1e-8, atol=1e-10)


def test_objective_decomposition():
    c = dma.f2_curve(synth.gen_composite(0.9, 0.3, 2**15, 1), dma.DmaConfig(s_min=3))
    fit = scalingfit.fit_crossover(c)
    x, y = np.log(c.s.astype(float)), np.log(c.F)
    xc = np.log(fit.s_cross)
    left, right = x <= xc, x >= xc
    O = np.sum((y[left] - fit.c1 - fit.H1 * x[left]) ** 2) + np.sum((y[right] - fit.c2 - fit.H2 * x[right]) ** 2)
    assert np.isclose(O, fit.O_min, rtol=1e-9, atol=1e-14)
    assert fit.n_left >= 3 and fit.n_right >= 3
    assert c.s[0] < fit.s_cross < c.s[-1]


def test_knot_point_counted_twice():
    x = np.log(GRID.astype(float))
    xc = x[10]
    *_, nl, nr, _ = scalingfit.crossover_objective(x, 0.5 * x, xc)
    assert nl + nr == x.size + 1


def test_ties_go_to_smaller_scale():
    c = FluctuationCurve(s=GRID, F=GRID**0.7)
    fit = scalingfit.fit_crossover(c, refine=False)
    x = np.log(GRID.astype(float))
    first = min(k for k in scalingfit.candidate_knots(x) if scalingfit.admissible(x, k))
    assert np.isclose(np.log(fit.s_cross), first)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.1, 1.4),
    st.floats(0.1, 1.4),
    st.floats(np.log(30), np.log(3000)),
    st.floats(0.0, 0.05),
    st.integers(0, 2**31),
)
def test_crossover_invariants(H1, H2, lx, noise, seed):
    F = oracles.piecewise_curve(GRID, H1, H2, np.exp(lx))
    F = F * np.exp(noise * np.random.default_rng(seed).standard_normal(F.size))
    c = FluctuationCurve(s=GRID, F=F)
    fit = scalingfit.fit_crossover(c)
    xc = np.log(fit.s_cross)
    # intersection constraint
    assert abs((fit.c1 + fit.H1 * xc) - (fit.c2 + fit.H2 * xc)) <= 1e-9 * max(1, abs(fit.c1) + abs(fit.c2))
    # nesting: the single line is feasible
    assert fit.O_min <= fit.single.rss + 1e-12
    # grid optimality
    scan = scalingfit.scan_crossover(np.log(GRID.astype(float)), np.log(F))
    assert fit.O_min <= min(o for _, o in scan) + scalingfit.tie_tolerance(np.log(F))


def test_no_crossover_detector_on_fgn():
    flagged = 0
    for seed in range(10):
        c = dma.f2_curve(synth.gen_fgn(0.8, 2**17, seed))
        flagged += scalingfit.detect_outlier_no_crossover(scalingfit.fit_crossover(c))
    assert flagged >= 9


def test_bic_fallback_without_errors():
    fit = scalingfit.fit_crossover(piecewise())
    assert fit.dh_z is None
    assert not scalingfit.bic_prefers_single(fit)


def test_composite_crossover_recovered():
    # white noise below s_x, fGn(0.9) above; the oracle is the fit to the
    # exact expected DMA curve of the same mixture
    H, s_eq = 0.9, 300
    amp = synth.composite_amplitude(H, s_eq)
    assert synth.composite_crossover(H, amp) == s_eq
    cfg = dma.DmaConfig(s_min=3)
    grid = cfg.scale_grid(2**20)
    ev = [
        dma.expected_residual_variance(lambda k: (np.asarray(k) == 0) + amp**2 * synth.fgn_autocovariance(H, k), int(s))
        for s in grid
    ]
    ref = scalingfit.fit_crossover(FluctuationCurve(s=grid, F=np.sqrt(ev)))
    fit = scalingfit.fit_crossover(dma.f2_curve(synth.gen_composite(H, amp, 2**20, 1), cfg))
    assert abs(fit.H1 - ref.H1) <= 0.05 and abs(fit.H2 - ref.H2) <= 0.05
    assert abs(np.log2(fit.s_cross / ref.s_cross)) <= 1
    assert abs(np.log2(fit.s_cross / s_eq)) <= 1
    assert not scalingfit.detect_outlier_no_crossover(fit)
