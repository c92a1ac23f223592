"""Detrending moving average (DMA) analysis.

The profile of a series is detrended by a moving average of window ``s``
whose position relative to the current point is set by ``theta``
(0 backward, 0.5 centred, 1 forward).  Residuals are cut into disjoint
blocks of length ``s``, and the block root-mean-squares are averaged into
the overall fluctuation function F2(s) ~ s**H.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import signal

from .errors import AggrDmaError

# Residual kernels at or below this length are convolved directly; longer
# ones go through FFT.  The switch is fixed so results never depend on timing.
_DIRECT_CONV_MAX = 256


@dataclass(frozen=True)
class Profile:
    """Cumulative sum of a mean-removed series.

    ``increments`` holds a(t) - <a>; residuals are computed from it rather
    than from ``y`` to avoid cancellation in long cumulative sums.
    """

    y: np.ndarray
    mean_a: float
    increments: np.ndarray

    @property
    def N(self):
        return self.y.size

    @classmethod
    def from_values(cls, y):
        """Wrap an already-integrated sequence (no mean removal)."""
        y = np.asarray(y, dtype=float)
        return cls(y=y, mean_a=0.0, increments=np.diff(y, prepend=0.0))


@dataclass(frozen=True)
class DmaConfig:
    theta: float = 0.5
    s_min: int = 10
    s_max: Optional[int] = None
    n_scales: int = 40
    q: float = 2.0
    scales: Optional[Tuple[int, ...]] = None
    odd_scales: Optional[bool] = None

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise AggrDmaError("invalid-config", f"theta must lie in [0, 1], got {self.theta}")
        if self.scales is not None:
            object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))
            lo = min(self.scales) if self.scales else 0
            if lo < 3:
                raise AggrDmaError("invalid-config", "every scale must be >= 3")
        elif self.s_min < 3:
            raise AggrDmaError("invalid-config", f"s_min must be >= 3, got {self.s_min}")
        if self.n_scales < 1:
            raise AggrDmaError("invalid-config", "n_scales must be >= 1")

    @property
    def use_odd_scales(self):
        # a centred window of even size sits half a sample off t, which leaves
        # a residual from any linear trend; default grids avoid even sizes
        if self.odd_scales is None:
            return self.theta == 0.5
        return self.odd_scales

    def scale_grid(self, N):
        """Strictly increasing integer scales for a series of length N."""
        if self.scales is not None:
            grid = np.unique(np.asarray(self.scales, dtype=np.int64))
            if grid[-1] > N // 10:
                raise AggrDmaError(
                    "invalid-config",
                    f"largest scale {grid[-1]} exceeds N/10 = {N // 10}",
                )
            return grid
        s_max = N // 10 if self.s_max is None else self.s_max
        if s_max > N // 10:
            raise AggrDmaError("invalid-config", f"s_max {s_max} exceeds N/10 = {N // 10}")
        if N < 10 * self.s_min or s_max < self.s_min:
            raise AggrDmaError(
                "insufficient-data",
                f"series of length {N} too short for s_min = {self.s_min}",
            )
        grid = np.rint(np.geomspace(self.s_min, s_max, self.n_scales)).astype(np.int64)
        if self.use_odd_scales:
            grid = 2 * (grid // 2) + 1
            grid[grid > s_max] -= 2
            grid = grid[grid >= 3]
        return np.unique(grid)

    def as_dict(self):
        return {
            "theta": self.theta,
            "s_min": self.s_min,
            "s_max": self.s_max,
            "n_scales": self.n_scales,
            "q": self.q,
            "scales": list(self.scales) if self.scales is not None else None,
            "odd_scales": self.use_odd_scales,
        }


@dataclass
class FluctuationCurve:
    s: np.ndarray
    F: np.ndarray
    q: float = 2.0
    theta: float = 0.5
    dropped: Tuple[int, ...] = field(default_factory=tuple)
    se: Optional[np.ndarray] = None

    def __post_init__(self):
        self.s = np.asarray(self.s)
        self.F = np.asarray(self.F, dtype=float)
        if self.s.shape != self.F.shape:
            raise AggrDmaError("invalid-curve", "s and F must have the same length")
        if self.se is not None:
            self.se = np.asarray(self.se, dtype=float)
            if self.se.shape != self.s.shape:
                raise AggrDmaError("invalid-curve", "se must match s in length")
        if self.s.size > 1 and np.any(np.diff(self.s) <= 0):
            raise AggrDmaError("invalid-curve", "scales must be strictly increasing")
        if np.any(self.F <= 0):
            raise AggrDmaError("invalid-curve", "fluctuations must be positive")

    def __len__(self):
        return self.s.size

    @property
    def points(self):
        return list(zip(self.s.tolist(), self.F.tolist()))


def profile(series):
    """Cumulative sum of ``series`` after subtracting its sample mean."""
    a = np.asarray(getattr(series, "values", series), dtype=float)
    if a.size == 0:
        raise AggrDmaError("empty-series", "cannot build a profile of an empty series")
    mean_a = float(a.mean())
    x = a - mean_a
    return Profile(y=np.cumsum(x), mean_a=mean_a, increments=x)


def window_offsets(s, theta):
    """Return (back, forward): samples before and after t in the window."""
    forward = math.floor((s - 1) * theta)
    return (s - 1) - forward, forward


def _as_profile(p):
    return p if isinstance(p, Profile) else Profile.from_values(p)


def moving_average(p, s, theta=0.5):
    """
    Moving average of the profile over windows of size ``s``.

    Returns
    -------
    values : np.ndarray
        Averages at every t whose window lies inside the series
        (N - s + 1 values).
    offset : int
        Zero-based index of t for ``values[0]``.
    """
    p = _as_profile(p)
    y = p.y
    if s > y.size:
        raise AggrDmaError("scale-exceeds-length", f"s = {s} > N = {y.size}")
    if s < 1:
        raise AggrDmaError("invalid-config", f"window must be >= 1, got {s}")
    back, _ = window_offsets(s, theta)
    c = np.concatenate(([0.0], np.cumsum(y)))
    return (c[s:] - c[:-s]) / s, back


def _residual_kernel(s, back):
    # eps[i] = (1/s) * sum_{d=1}^{s-1} k[d] * x[i + d]
    d = np.arange(1, s, dtype=float)
    return np.where(d <= back, d, -(s - d)) / s


def residuals(p, s, theta=0.5):
    """Profile minus its moving average on the valid range (N - s + 1 values)."""
    p = _as_profile(p)
    N = p.N
    if s > N:
        raise AggrDmaError("scale-exceeds-length", f"s = {s} > N = {N}")
    if s < 1:
        raise AggrDmaError("invalid-config", f"window must be >= 1, got {s}")
    if s == 1:
        return np.zeros(N)
    back, _ = window_offsets(s, theta)
    kernel = _residual_kernel(s, back)[::-1]
    x = p.increments[1:]
    if s <= _DIRECT_CONV_MAX:
        return np.convolve(x, kernel, mode="valid")
    return signal.fftconvolve(x, kernel, mode="valid")


def segment_fluctuations(eps, s):
    """RMS of ``eps`` over disjoint consecutive blocks of length ``s``."""
    eps = np.asarray(eps, dtype=float)
    n_seg = eps.size // s
    if n_seg < 1:
        raise AggrDmaError("insufficient-data", f"{eps.size} residuals < one block of {s}")
    blocks = eps[: n_seg * s].reshape(n_seg, s)
    return np.sqrt(np.mean(blocks * blocks, axis=1))


def segment_table(series, cfg):
    """F_v(s) for every scale of the configured grid.

    Returns the scale array and a list of per-scale F_v arrays.  This is the
    shared input of :func:`f2_curve` and the generalized-moment curves.
    """
    p = series if isinstance(series, Profile) else profile(series)
    grid = cfg.scale_grid(p.N)
    table = [segment_fluctuations(residuals(p, int(s), cfg.theta), int(s)) for s in grid]
    return grid, table


def generalized_mean(fv, q):
    """
    Order-q power mean of positive block fluctuations.

    q == 0 gives the geometric mean.  Values are rescaled by the extreme
    element before powering so large |q| cannot overflow.
    """
    fv = np.asarray(fv, dtype=float)
    if q == 2:
        return float(np.sqrt(np.mean(fv * fv)))
    if q == 0:
        return float(np.exp(np.mean(np.log(fv))))
    ref = fv.max() if q > 0 else fv.min()
    return float(ref * np.mean((fv / ref) ** q) ** (1.0 / q))


def f2_curve(series, cfg=None):
    """Second-order overall fluctuation curve F2(s)."""
    cfg = cfg or DmaConfig()
    grid, table = segment_table(series, cfg)
    return curve_from_table(grid, table, 2.0, cfg.theta)


def curve_from_table(grid, table, q, theta):
    s_keep, f_keep, se_keep, dropped = [], [], [], []
    for s, fv in zip(grid, table):
        if not np.any(fv > 0):
            dropped.append(int(s))
            continue
        F = _moment(fv, q, int(s))
        if F > 0 and np.isfinite(F):
            s_keep.append(int(s))
            f_keep.append(F)
            se_keep.append(log_f2_stderr(fv))
        else:
            dropped.append(int(s))
    if not s_keep:
        raise AggrDmaError("degenerate-series", "all block fluctuations are zero")
    if dropped:
        warnings.warn(f"dropped {len(dropped)} scale(s) with zero fluctuation: {dropped}")
    return FluctuationCurve(
        s=np.asarray(s_keep, dtype=np.int64),
        F=np.asarray(f_keep),
        q=float(q),
        theta=theta,
        dropped=tuple(dropped),
        se=np.asarray(se_keep) if q == 2 else None,
    )


def log_f2_stderr(fv):
    """Standard error of ln F2 from the spread of squared block fluctuations.

    Blocks are treated as independent, so this understates the error for
    strongly persistent series; it is only used to rank crossover evidence.
    """
    f2 = fv * fv
    m = f2.mean()
    if fv.size < 2 or m == 0:
        return float("nan")
    return float(0.5 * f2.std(ddof=1) / (m * np.sqrt(fv.size)))


def _moment(fv, q, s):
    zero = fv == 0
    n_zero = int(zero.sum())
    if n_zero == 0 or q > 0:
        # zeros add nothing to a positive-order sum; N_s keeps its full count
        return generalized_mean(fv, q)
    if n_zero > 0.01 * fv.size:
        raise AggrDmaError(
            "negative-moment-unstable",
            f"{n_zero}/{fv.size} zero blocks at s = {s} for q = {q}",
        )
    warnings.warn(f"excluded {n_zero} zero block(s) at s = {s} for q = {q}")
    return generalized_mean(fv[~zero], q)


def expected_residual_variance(acov, s, theta=0.5):
    """
    E[eps(t)**2] for a stationary increment process with autocovariance ``acov``.

    The residual is a fixed linear filter of the increments, so its variance
    is sum over lags of acov(lag) times the filter's autocorrelation.  This
    ignores the sample-mean removal, which is negligible for long series.
    """
    if s < 2:
        return 0.0
    back, _ = window_offsets(s, theta)
    k = _residual_kernel(s, back)
    n = 1 << int(np.ceil(np.log2(2 * k.size)))
    K = np.fft.rfft(k, n)
    ac = np.fft.irfft(K * np.conj(K), n)[: k.size]
    g = np.asarray(acov(np.arange(k.size)), dtype=float)
    return float(g[0] * ac[0] + 2.0 * np.sum(g[1:] * ac[1:]))
