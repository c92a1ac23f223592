"""Ordinary least squares with p-value driven stepwise selection.

Used to regress Hurst exponents on firm characteristics.  Coefficient
tests are two-sided t-tests with n - k - 1 degrees of freedom; every
reported number comes from a fresh fit on the final column set.
"""
import csv
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy import stats

from .errors import AggrDmaError

INTERCEPT = "const"


@dataclass
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    names: Tuple[str, ...] = ()
    response: str = "response"

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.X.shape[0] != self.y.size:
            raise AggrDmaError("invalid-design", "X and y must have the same number of rows")
        if not self.names:
            self.names = tuple(f"X{i + 1}" for i in range(self.X.shape[1]))
        self.names = tuple(self.names)
        if len(self.names) != self.X.shape[1]:
            raise AggrDmaError("invalid-design", "one name per column is required")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise AggrDmaError("invalid-design", "missing or non-finite cells")

    @property
    def n(self):
        return self.y.size

    def columns(self, idx):
        return DesignMatrix(self.X[:, list(idx)], self.y, tuple(self.names[i] for i in idx), self.response)

    def standardized(self):
        sd = self.X.std(axis=0, ddof=1)
        sd[sd == 0] = 1.0
        return DesignMatrix((self.X - self.X.mean(axis=0)) / sd, self.y, self.names, self.response)


@dataclass
class RegressionResult:
    selected: Tuple[str, ...]
    beta: np.ndarray  # intercept first
    se: np.ndarray
    t: np.ndarray
    p_values: np.ndarray
    r2: float
    adj_r2: float
    n: int
    residuals: np.ndarray = field(repr=False, default=None)
    history: list = field(default_factory=list, repr=False)

    @property
    def terms(self):
        return (INTERCEPT,) + tuple(self.selected)

    def as_dict(self):
        return {
            "selected": list(self.selected),
            "beta": dict(zip(self.terms, self.beta.tolist())),
            "se": dict(zip(self.terms, self.se.tolist())),
            "p": dict(zip(self.terms, self.p_values.tolist())),
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "n": self.n,
            "steps": self.history,
        }


def ols_fit(design):
    """
    OLS of the response on an intercept plus every column of ``design``.

    Raises ``collinear-design`` when the augmented matrix is rank deficient
    or leaves no residual degrees of freedom.
    """
    n, k = design.X.shape
    A = np.column_stack([np.ones(n), design.X])
    if n <= k + 1:
        raise AggrDmaError("collinear-design", f"{n} rows for {k + 1} coefficients")
    beta, _, rank, _ = np.linalg.lstsq(A, design.y, rcond=None)
    if rank < k + 1:
        raise AggrDmaError("collinear-design", f"design rank {rank} < {k + 1} columns")
    resid = design.y - A @ beta
    dof = n - k - 1
    rss = float(resid @ resid)
    sigma2 = rss / dof
    cov = sigma2 * np.linalg.inv(A.T @ A)
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, np.where(beta == 0, 0.0, np.inf))
    p = 2.0 * stats.t.sf(np.abs(t), dof)
    dy = design.y - design.y.mean()
    tss = float(dy @ dy)
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    adj = 1.0 - (1.0 - r2) * (n - 1) / dof if k > 0 else r2
    return RegressionResult(
        selected=tuple(design.names),
        beta=beta,
        se=se,
        t=t,
        p_values=p,
        r2=r2,
        adj_r2=adj,
        n=n,
        residuals=resid,
    )


def _entry_p(design, chosen, j):
    fit = ols_fit(design.columns(chosen + [j]))
    return float(fit.p_values[-1])


def stepwise_select(design, p_enter=0.05, p_remove=0.10, standardize=False, max_steps=None):
    """
    Forward entry / backward removal on coefficient p-values.

    Each round first admits the candidate with the smallest entry p-value
    if it is at most ``p_enter`` (ties go to the lower column index), then
    drops the selected column with the largest p-value if it exceeds
    ``p_remove``.  The loop stops when a round changes nothing.  Candidates
    that would make the design collinear are skipped.
    """
    if not p_enter < p_remove:
        raise AggrDmaError("invalid-config", "p_enter must be smaller than p_remove")
    if standardize:
        design = design.standardized()
    k = design.X.shape[1]
    max_steps = 4 * k + 4 if max_steps is None else max_steps
    chosen = []
    history = []
    seen = {()}
    for _ in range(max_steps):
        changed = False
        best_j, best_p = None, np.inf
        for j in range(k):
            if j in chosen:
                continue
            try:
                pj = _entry_p(design, chosen, j)
            except AggrDmaError:
                continue
            if pj < best_p:
                best_j, best_p = j, pj
        if best_j is not None and best_p <= p_enter:
            chosen.append(best_j)
            history.append({"enter": design.names[best_j], "p": best_p})
            changed = True
        if chosen:
            fit = ols_fit(design.columns(chosen))
            i = int(np.argmax(fit.p_values[1:]))
            if fit.p_values[1 + i] > p_remove:
                history.append({"remove": design.names[chosen[i]], "p": float(fit.p_values[1 + i])})
                chosen.pop(i)
                changed = True
        key = tuple(sorted(chosen))
        if not changed or key in seen:
            # a revisited set means entry and removal would cycle
            break
        seen.add(key)
    chosen = sorted(chosen)
    res = ols_fit(design.columns(chosen))
    res.history = history
    return res


def read_design(path, response="response"):
    """CSV with a header row; ``response`` names the dependent column."""
    with open(path, newline="") as fh:
        lines = [(i, ln) for i, ln in enumerate(fh, start=1) if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise AggrDmaError("parse-error", f"{path}: empty file")
    header = [h.strip() for h in next(csv.reader([lines[0][1]]))]
    if response not in header:
        raise AggrDmaError("parse-error", f"line {lines[0][0]}: no {response!r} column")
    data = []
    for lineno, line in lines[1:]:
        row = next(csv.reader([line]))
        if len(row) != len(header):
            raise AggrDmaError("parse-error", f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            data.append([float(c) for c in row])
        except ValueError:
            raise AggrDmaError("parse-error", f"line {lineno}: non-numeric cell") from None
    arr = np.asarray(data, dtype=float).reshape(-1, len(header))
    ri = header.index(response)
    keep = [i for i in range(len(header)) if i != ri]
    return DesignMatrix(arr[:, keep], arr[:, ri], tuple(header[i] for i in keep), response)
