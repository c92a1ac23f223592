"""Synthetic series with known scaling, and shuffled surrogates.

All randomness goes through :func:`make_rng`, which pins numpy's PCG64
bit generator so a (generator spec, seed) pair always replays the same
series.
"""
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from . import dma
from .errors import AggrDmaError

KINDS = ("fgn", "cascade", "white", "composite")


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def fgn_autocovariance(H, k):
    """Autocovariance of unit-variance fractional Gaussian noise at lag(s) k."""
    k = np.abs(np.asarray(k, dtype=float))
    return 0.5 * ((k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))


def gen_fgn(H, N, seed):
    """
    Fractional Gaussian noise by circulant embedding (Davies-Harte).

    The covariance row gamma(0..N) is embedded in a circulant matrix of size
    2N whose eigenvalues are non-negative for every 0 < H < 1, so the
    synthesis is exact rather than spectrally approximated.

    Parameters
    ----------
    H : float
        Hurst exponent, strictly inside (0, 1).
    N : int
        Number of samples.
    seed : int
        Seed for :func:`make_rng`.

    Returns
    -------
    np.ndarray
        Length-N float64 series with unit variance.
    """
    if not 0.0 < H < 1.0:
        raise AggrDmaError("invalid-parameter", f"fGn requires 0 < H < 1, got {H}")
    if N < 1:
        raise AggrDmaError("invalid-parameter", f"N must be >= 1, got {N}")
    rng = make_rng(seed)
    if N == 1:
        return rng.standard_normal(1)

    gamma = fgn_autocovariance(H, np.arange(N + 1))
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    m = row.size  # 2N
    lam = np.fft.rfft(row).real
    lam_full = np.concatenate([lam, lam[-2:0:-1]])
    floor = -1e-10 * lam_full.max()
    if lam_full.min() < floor:
        raise AggrDmaError(
            "internal-error", "circulant embedding is not positive definite"
        )
    lam_full = np.clip(lam_full, 0.0, None)

    w = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    z = np.fft.fft(np.sqrt(lam_full / m) * w)
    return np.ascontiguousarray(z[:N].real)


def gen_white(N, seed):
    return make_rng(seed).standard_normal(N)


def gen_cascade(p, levels, seed=None):
    """
    Binomial multiplicative cascade of length ``2**levels``.

    With ``seed=None`` the left half of every interval always receives the
    fraction ``p``.  With an integer seed the two fractions are swapped
    independently for each interval with probability 1/2.  Total mass is 1.
    """
    if not 0.0 < p < 1.0:
        raise AggrDmaError("invalid-parameter", f"cascade requires 0 < p < 1, got {p}")
    if levels < 0:
        raise AggrDmaError("invalid-parameter", f"levels must be >= 0, got {levels}")
    rng = None if seed is None else make_rng(seed)
    mass = np.ones(1)
    for _ in range(levels):
        left = np.full(mass.size, p)
        if rng is not None:
            swap = rng.random(mass.size) < 0.5
            left[swap] = 1.0 - p
        nxt = np.empty(2 * mass.size)
        nxt[0::2] = mass * left
        nxt[1::2] = mass * (1.0 - left)
        mass = nxt
    return mass


def analytic_cascade_tau(p, q):
    """Mass exponent of the binomial cascade: -log2(p**q + (1-p)**q)."""
    if not 0.0 < p < 1.0:
        raise AggrDmaError("invalid-parameter", f"cascade requires 0 < p < 1, got {p}")
    q = np.asarray(q, dtype=float)
    out = -np.log2(p ** q + (1.0 - p) ** q)
    return float(out) if out.ndim == 0 else out


def analytic_cascade_alpha(p, q):
    """Exact derivative of :func:`analytic_cascade_tau` with respect to q."""
    q = np.asarray(q, dtype=float)
    a, b = p ** q, (1.0 - p) ** q
    out = -(a * np.log(p) + b * np.log(1.0 - p)) / ((a + b) * np.log(2.0))
    return float(out) if out.ndim == 0 else out


def gen_composite(H, amplitude, N, seed):
    """Unit white noise plus ``amplitude`` times fGn(H).

    For H > 1/2 the white component dominates small scales and the fGn
    dominates large ones; see :func:`composite_crossover`.
    """
    rng = make_rng(seed)
    white_seed, fgn_seed = rng.integers(0, 2**63, size=2)
    return gen_white(N, int(white_seed)) + amplitude * gen_fgn(H, N, int(fgn_seed))


def _white_acov(k):
    return (np.asarray(k) == 0).astype(float)


def _variance_ratio(H, s, theta):
    # E[F^2] of unit white noise over E[F^2] of unit fGn(H) at scale s
    white = dma.expected_residual_variance(_white_acov, s, theta)
    fgn = dma.expected_residual_variance(lambda k: fgn_autocovariance(H, k), s, theta)
    return white / fgn


def composite_amplitude(H, s_cross, theta=0.5):
    """fGn amplitude that puts the DMA variance crossover at ``s_cross``.

    At the returned amplitude the expected squared DMA residuals of the white
    and fGn components are equal at scale ``s_cross``.
    """
    if H == 0.5:
        raise AggrDmaError("invalid-parameter", "no crossover when H == 0.5")
    return float(np.sqrt(_variance_ratio(H, int(round(s_cross)), theta)))


def composite_crossover(H, amplitude, theta=0.5, s_max=2**20):
    """Integer scale where the two components' expected DMA variances cross."""
    if H <= 0.5:
        raise AggrDmaError("invalid-parameter", "composite crossover needs H > 0.5")
    a2 = amplitude * amplitude
    lo, hi = 3, s_max
    if _variance_ratio(H, lo, theta) <= a2:
        return lo
    if _variance_ratio(H, hi, theta) > a2:
        raise AggrDmaError("invalid-parameter", "crossover beyond s_max")
    # the ratio decreases monotonically in s for H > 1/2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _variance_ratio(H, mid, theta) > a2:
            lo = mid
        else:
            hi = mid
    return hi


def shuffle(series, seed):
    """Uniform random permutation (Fisher-Yates) of ``series``."""
    x = np.array(series, copy=True)
    if x.size < 2:
        return x
    make_rng(seed).shuffle(x)
    return x


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    N: int = 2**17
    seed: int = 0
    H: Optional[float] = None
    p: Optional[float] = None
    levels: Optional[int] = None
    amplitude: Optional[float] = None
    deterministic: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AggrDmaError("invalid-parameter", f"unknown generator kind {self.kind!r}")
        if self.kind in ("fgn", "composite") and (self.H is None or not 0 < self.H < 1):
            raise AggrDmaError("invalid-parameter", f"{self.kind} requires 0 < H < 1")
        if self.kind == "cascade":
            if self.p is None or not 0 < self.p < 1:
                raise AggrDmaError("invalid-parameter", "cascade requires 0 < p < 1")
            if self.levels is None:
                raise AggrDmaError("invalid-parameter", "cascade requires levels")
        if self.kind == "composite" and self.amplitude is None:
            raise AggrDmaError("invalid-parameter", "composite requires amplitude")

    def as_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


def generate(spec):
    """Dispatch a :class:`GeneratorSpec` to the matching generator."""
    if spec.kind == "fgn":
        return gen_fgn(spec.H, spec.N, spec.seed)
    if spec.kind == "white":
        return gen_white(spec.N, spec.seed)
    if spec.kind == "cascade":
        return gen_cascade(spec.p, spec.levels, None if spec.deterministic else spec.seed)
    return gen_composite(spec.H, spec.amplitude, spec.N, spec.seed)
