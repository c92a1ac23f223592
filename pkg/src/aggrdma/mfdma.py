"""Multifractal DMA: generalized fluctuation functions and singularity spectra.

Block fluctuations F_v(s) are computed once per scale and shared by every
moment order q.  The q-th order fluctuation F_q(s) is the order-q power
mean of the F_v (the geometric mean at q = 0), h(q) is its log-log slope,
and tau, alpha and f follow from the standard multifractal formalism with
a support dimension of 1.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import scalingfit
from .dma import DmaConfig, curve_from_table, segment_table
from .errors import AggrDmaError

SUPPORT_DIMENSION = 1.0


def default_qgrid(q_min=-10.0, q_max=10.0, step=0.5):
    n = int(round((q_max - q_min) / step))
    q = q_min + step * np.arange(n + 1)
    # snap values that should be exactly integral multiples of the step
    return np.round(q / step) * step


def check_qgrid(q):
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or q.size == 0:
        raise AggrDmaError("invalid-qgrid", "q grid must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(q)):
        raise AggrDmaError("invalid-qgrid", "q values must be finite")
    if q.size > 1 and np.any(np.diff(q) <= 0):
        raise AggrDmaError("invalid-qgrid", "q values must be strictly increasing")
    return q


@dataclass
class HurstTable:
    q: np.ndarray
    h: np.ndarray
    r2: np.ndarray
    fit_range: Tuple[Optional[float], Optional[float]] = (None, None)


@dataclass
class MultifractalResult:
    q: np.ndarray
    h: np.ndarray
    tau: np.ndarray
    alpha: np.ndarray
    f: np.ndarray
    per_q_r2: np.ndarray
    theta: float
    fit_range: Tuple[Optional[float], Optional[float]] = (None, None)
    Df: float = SUPPORT_DIMENSION
    curves: list = field(default_factory=list, repr=False)

    def rows(self):
        return zip(self.q, self.h, self.tau, self.alpha, self.f, self.per_q_r2)


def _table(series, cfg):
    if isinstance(series, tuple) and len(series) == 2:
        return series
    return segment_table(series, cfg)


def fq_curve(series, cfg=None, q=2.0):
    """Order-q fluctuation curve.  At q = 2 it equals ``dma.f2_curve``."""
    cfg = cfg or DmaConfig()
    grid, table = _table(series, cfg)
    return curve_from_table(grid, table, float(q), cfg.theta)


def fq_curves(series, cfg=None, qgrid=None):
    """Fluctuation curves for every q, sharing one segment table."""
    cfg = cfg or DmaConfig()
    q = check_qgrid(default_qgrid() if qgrid is None else qgrid)
    grid, table = _table(series, cfg)
    return [curve_from_table(grid, table, float(qi), cfg.theta) for qi in q]


def default_fit_range(curve_q2, theta):
    """
    Scaling range used for h(q).

    Backward and forward variants use the whole grid.  The centred variant
    fits above the crossover of the q = 2 curve when one is detected and at
    least three scales lie beyond it.
    """
    if theta != 0.5:
        return (None, None)
    try:
        fit = scalingfit.fit_crossover(curve_q2)
    except AggrDmaError:
        return (None, None)
    if scalingfit.detect_outlier_no_crossover(fit):
        return (None, None)
    if np.sum(curve_q2.s > fit.s_cross) < 3:
        return (None, None)
    # open lower bound: s > s_x
    above = curve_q2.s[curve_q2.s > fit.s_cross]
    return (float(above[0]), None)


def generalized_hurst(series, cfg=None, qgrid=None, fit_range=None):
    """Per-q log-log slopes h(q) with their r**2."""
    cfg = cfg or DmaConfig()
    q = check_qgrid(default_qgrid() if qgrid is None else qgrid)
    grid, table = _table(series, cfg)
    if fit_range is None:
        fit_range = default_fit_range(curve_from_table(grid, table, 2.0, cfg.theta), cfg.theta)
    curves = [curve_from_table(grid, table, float(qi), cfg.theta) for qi in q]
    fits = [scalingfit.fit_single_powerlaw(c, fit_range) for c in curves]
    table_out = HurstTable(
        q=q,
        h=np.array([f.H for f in fits]),
        r2=np.array([f.r2 for f in fits]),
        fit_range=tuple(fit_range),
    )
    return table_out, curves


def mass_exponents(h_table, Df=SUPPORT_DIMENSION):
    """tau(q) = q h(q) - Df.  Accepts a HurstTable or a (q, h) pair."""
    if isinstance(h_table, HurstTable):
        q, h = h_table.q, h_table.h
    else:
        q, h = h_table[0], h_table[1]
    return np.asarray(q, dtype=float) * np.asarray(h, dtype=float) - Df


def legendre_spectrum(q, tau, rtol=1e-9):
    """
    Numerical Legendre transform of tau(q).

    alpha is the central difference of tau (one-sided at the two ends) on a
    uniform q grid; f = q alpha - tau.
    """
    q = check_qgrid(q)
    tau = np.asarray(tau, dtype=float)
    if q.size < 3:
        raise AggrDmaError("invalid-qgrid", "need at least 3 q values")
    dq = np.diff(q)
    if not np.allclose(dq, dq[0], rtol=rtol, atol=0.0):
        raise AggrDmaError("grid-not-uniform", "resample tau onto a uniform q grid first")
    alpha = np.gradient(tau, q)
    f = q * alpha - tau
    return alpha, f


def mfdma(series, cfg=None, qgrid=None, fit_range=None):
    """
    Full multifractal analysis of one series.

    With fewer than three q values the spectrum is undefined and ``alpha``
    and ``f`` are returned as NaN.
    """
    cfg = cfg or DmaConfig()
    ht, curves = generalized_hurst(series, cfg, qgrid, fit_range)
    tau = mass_exponents(ht)
    if ht.q.size >= 3:
        alpha, f = legendre_spectrum(ht.q, tau)
    else:
        alpha = f = np.full(ht.q.size, np.nan)
    return MultifractalResult(
        q=ht.q,
        h=ht.h,
        tau=tau,
        alpha=alpha,
        f=f,
        per_q_r2=ht.r2,
        theta=cfg.theta,
        fit_range=ht.fit_range,
        curves=curves,
    )


def _is_unimodal(values, tol):
    d = np.diff(values)
    rising = True
    for step in d:
        if rising and step < -tol:
            rising = False
        elif not rising and step > tol:
            return False
    return True


def spectrum_summary(result, concavity_tol=0.01, bell_tol=1e-3):
    """
    Width, asymmetry and shape diagnostics of a singularity spectrum.

    ``asymmetry`` is (right extent - left extent) / width, measured from
    alpha at q = 0 (the maximum of f); positive values mean a spectrum
    stretched towards large alpha.  The spectrum counts as bell-shaped when
    f, ordered by alpha, rises then falls; reversals smaller than
    ``bell_tol`` (finite-difference noise in the flat tails) are ignored.
    """
    q = np.asarray(result.q)
    alpha = np.asarray(result.alpha)
    f = np.asarray(result.f)
    width = float(alpha.max() - alpha.min())
    i0 = np.flatnonzero(q == 0)
    if i0.size and width > 0:
        a0 = alpha[i0[0]]
        asym = float(((alpha.max() - a0) - (a0 - alpha.min())) / width)
    else:
        asym = float("nan")
    order = np.argsort(alpha, kind="stable")
    bell = _is_unimodal(f[order], bell_tol)
    d2 = np.diff(result.tau, 2)
    return {
        "delta_alpha": width,
        "asymmetry": asym,
        "bell_shaped": bool(bell),
        "tau_concave": bool(np.all(d2 <= concavity_tol)),
        "max_tau_second_difference": float(d2.max()) if d2.size else float("nan"),
    }
