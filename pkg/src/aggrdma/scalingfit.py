"""Power-law fits of fluctuation curves.

Two models are fitted in log-log space: a single straight line, and two
lines joined at a crossover scale s_x,

    ln F = c1 + H1 ln s   (s <= s_x)
    ln F = c2 + H2 ln s   (s >= s_x)

with c1 + H1 ln s_x = c2 + H2 ln s_x.  The crossover model is fitted by
scanning candidate knots and solving the constrained least-squares problem
exactly at each one.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import AggrDmaError

NO_CROSSOVER_DH = 0.05
NO_CROSSOVER_Z = 3.0
MIN_SEGMENT_POINTS = 3
# objective values closer than this fraction of the total sum of squares of
# ln F are ties (rounding noise), resolved toward the smaller scale
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class PowerLawFit:
    H: float
    c: float
    r2: float
    s_lo: float
    s_hi: float
    n: int
    rss: float

    @property
    def range(self):
        return (self.s_lo, self.s_hi)


@dataclass(frozen=True)
class CrossoverFit:
    H1: float
    H2: float
    s_cross: float
    c1: float
    c2: float
    O_min: float
    n: int = 0
    single: Optional[PowerLawFit] = None
    n_left: int = 0
    n_right: int = 0
    covariance: Tuple[Tuple[float, ...], ...] = field(default=(), repr=False)
    dh_z: Optional[float] = None

    @property
    def ln_s_cross(self):
        return float(np.log(self.s_cross))

    def as_dict(self):
        d = {
            "H1": self.H1,
            "H2": self.H2,
            "s_cross": self.s_cross,
            "c1": self.c1,
            "c2": self.c2,
            "O_min": self.O_min,
            "n": self.n,
            "n_left": self.n_left,
            "n_right": self.n_right,
            "covariance_H1_H2_knot": [list(r) for r in self.covariance],
            "dh_z": self.dh_z,
        }
        if self.single is not None:
            d["single"] = {
                "H": self.single.H,
                "c": self.single.c,
                "r2": self.single.r2,
                "rss": self.single.rss,
            }
        return d


def _scales_in_range(curve, s_range=None):
    s = np.asarray(curve.s, dtype=float)
    keep = np.ones(s.size, dtype=bool)
    if s_range is not None:
        lo, hi = s_range
        if lo is not None:
            keep &= s >= lo
        if hi is not None:
            keep &= s <= hi
    return keep


def _loglog(curve, s_range=None):
    s = np.asarray(curve.s, dtype=float)
    F = np.asarray(curve.F, dtype=float)
    keep = _scales_in_range(curve, s_range)
    return np.log(s[keep]), np.log(F[keep])


def fit_line(x, y):
    """OLS of y on x.  Returns (slope, intercept, r2, rss)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = dx @ dx
    slope = (dx @ dy) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    rss = float(resid @ resid)
    syy = float(dy @ dy)
    r2 = 1.0 - rss / syy if syy > 0 else 1.0
    return float(slope), float(intercept), float(min(max(r2, 0.0), 1.0)), rss


def fit_single_powerlaw(curve, s_range=None):
    """Straight-line fit of ln F against ln s, optionally over ``s_range``."""
    x, y = _loglog(curve, s_range)
    if x.size < 3:
        raise AggrDmaError("insufficient-points", f"{x.size} points in fit range, need >= 3")
    H, c, r2, rss = fit_line(x, y)
    s = np.asarray(curve.s)[_scales_in_range(curve, s_range)]
    return PowerLawFit(H=H, c=c, r2=r2, s_lo=float(s[0]), s_hi=float(s[-1]), n=x.size, rss=rss)


def _hinge_design(x, x_cross):
    left = x <= x_cross
    right = x >= x_cross
    xl, xr = x[left], x[right]
    # unknowns: H1, H2, knot value b = ln F at s_x
    A = np.zeros((xl.size + xr.size, 3))
    A[: xl.size, 0] = xl - x_cross
    A[xl.size :, 1] = xr - x_cross
    A[:, 2] = 1.0
    return A, left, right


def crossover_objective(x, y, x_cross):
    """
    Exact constrained fit for a fixed knot at ln s = ``x_cross``.

    Points with x == x_cross enter both sums.

    Returns
    -------
    O, H1, H2, c1, c2, n_left, n_right, cov
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    A, left, right = _hinge_design(x, x_cross)
    rhs = np.concatenate([y[left], y[right]])
    beta, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < 3:
        raise AggrDmaError("no-admissible-crossover", "degenerate knot placement")
    H1, H2, b = (float(v) for v in beta)
    r = rhs - A @ beta
    O = float(r @ r)
    dof = max(rhs.size - 3, 1)
    cov = (O / dof) * np.linalg.inv(A.T @ A)
    return O, H1, H2, b - H1 * x_cross, b - H2 * x_cross, int(left.sum()), int(right.sum()), cov


def candidate_knots(x, n_sub=4):
    """Candidate ln s_x values: every abscissa plus ``n_sub`` points per gap."""
    x = np.asarray(x, dtype=float)
    pts = [x]
    for k in range(1, n_sub + 1):
        pts.append(x[:-1] + (x[1:] - x[:-1]) * k / (n_sub + 1))
    return np.unique(np.concatenate(pts))


def admissible(x, x_cross, min_points=MIN_SEGMENT_POINTS):
    return (x <= x_cross).sum() >= min_points and (x >= x_cross).sum() >= min_points


def tie_tolerance(y):
    y = np.asarray(y, dtype=float)
    d = y - y.mean()
    return TIE_RTOL * max(float(d @ d), 1.0)


def scan_crossover(x, y, n_sub=4, min_points=MIN_SEGMENT_POINTS):
    """Objective value at every admissible candidate knot, in ascending order."""
    out = []
    for xc in candidate_knots(x, n_sub):
        if admissible(x, xc, min_points):
            out.append((float(xc), crossover_objective(x, y, xc)[0]))
    return out


def fit_crossover(curve, s_range=None, n_sub=4, refine=True):
    """
    Constrained two-segment fit with the crossover scale as a free parameter.

    Every admissible candidate knot on the search grid is evaluated; ties
    (within :func:`tie_tolerance`) go to the smaller scale.  With ``refine``
    the best knot is then polished by a bounded scalar search between its
    neighbouring candidates, and the polished value is kept only if it
    lowers the objective by more than the tie tolerance.
    """
    x, y = _loglog(curve, s_range)
    if x.size < 2 * MIN_SEGMENT_POINTS + 1:
        raise AggrDmaError(
            "no-admissible-crossover", f"{x.size} points, need >= {2 * MIN_SEGMENT_POINTS + 1}"
        )
    cands = [xc for xc in candidate_knots(x, n_sub) if admissible(x, xc)]
    if not cands:
        raise AggrDmaError("no-admissible-crossover", "no knot leaves 3 points on each side")

    tol = tie_tolerance(y)
    best_i, best_O = 0, np.inf
    for i, xc in enumerate(cands):
        O = crossover_objective(x, y, xc)[0]
        if O < best_O - tol:
            best_i, best_O = i, O
    best_x = cands[best_i]

    if refine and len(cands) > 1:
        lo = cands[max(best_i - 1, 0)]
        hi = cands[min(best_i + 1, len(cands) - 1)]
        res = minimize_scalar(
            lambda xc: crossover_objective(x, y, xc)[0],
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-10},
        )
        if res.success and admissible(x, res.x) and res.fun < best_O - tol:
            best_x = float(res.x)

    O, H1, H2, c1, c2, nl, nr, cov = crossover_objective(x, y, best_x)
    single = fit_single_powerlaw(curve, s_range)
    dh_z = None
    se = getattr(curve, "se", None)
    if se is not None:
        keep = _scales_in_range(curve, s_range)
        dh_z = slope_difference_z(x, np.asarray(se, dtype=float)[keep], best_x, H1, H2)
    return CrossoverFit(
        H1=H1,
        H2=H2,
        s_cross=float(np.exp(best_x)),
        c1=c1,
        c2=c2,
        O_min=O,
        n=x.size,
        single=single,
        n_left=nl,
        n_right=nr,
        covariance=tuple(tuple(float(v) for v in row) for row in cov),
        dh_z=dh_z,
    )


def slope_difference_z(x, se, x_cross, H1, H2):
    """
    |H1 - H2| in units of its sampling error.

    Fluctuations at neighbouring scales reuse the same data and are nearly
    perfectly correlated, so a segment's slope carries little more
    information than its two end points.  Each slope error is therefore
    taken as the end-point log-errors combined in quadrature, divided by the
    segment's log span.  Returns None when errors are unavailable.
    """
    if se.size != x.size or not np.all(np.isfinite(se)):
        return None

    def se_at(v):
        return np.interp(v, x, se)

    def slope_se(lo, hi):
        span = hi - lo
        return np.hypot(se_at(lo), se_at(hi)) / span if span > 0 else np.inf

    err = np.hypot(slope_se(x[0], x_cross), slope_se(x_cross, x[-1]))
    if not np.isfinite(err) or err == 0:
        return None
    return float(abs(H1 - H2) / err)


def bic_prefers_single(fit):
    """True when BIC does not justify the two extra crossover parameters.

    The unpenalized comparison is vacuous (the single line is nested in the
    crossover family), so both residual sums are compared with a BIC
    penalty: 2 parameters for the line, 4 for the crossover model.
    """
    if fit.single is None:
        return False
    n = fit.n
    tiny = np.finfo(float).tiny
    bic_single = n * np.log(max(fit.single.rss, tiny) / n) + 2 * np.log(n)
    bic_cross = n * np.log(max(fit.O_min, tiny) / n) + 4 * np.log(n)
    return bool(bic_cross >= bic_single)


def detect_outlier_no_crossover(fit, dh=NO_CROSSOVER_DH, z=NO_CROSSOVER_Z):
    """
    True when the series should be reported with a single exponent.

    The crossover is rejected when the two exponents differ by less than
    ``dh``, or when the two-segment model is not supported by the data:
    a slope-difference z-score below ``z`` when per-scale errors are known,
    otherwise a BIC comparison against the single line.
    """
    if abs(fit.H1 - fit.H2) < dh:
        return True
    if fit.dh_z is not None:
        return fit.dh_z < z
    return bic_prefers_single(fit)
