"""Numerical/statistical kernel: F distribution, running covariance, pseudoinverse, OLS.

Self-contained on purpose: the F CDF/quantile pair drives the matching
threshold and must be reproducible without depending on an external stats
library. Linear algebra is delegated to numpy but the cutoff and rank
bookkeeping live here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

_CF_MAX_ITER = 300
_CF_EPS = 1e-16
_CF_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _CF_TINY:
        d = _CF_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _CF_TINY:
            d = _CF_TINY
        c = 1.0 + aa / c
        if abs(c) < _CF_TINY:
            c = _CF_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise RuntimeError(f"incomplete beta continued fraction failed to converge (a={a}, b={b}, x={x})")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0, x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # Continued fraction converges fastest on the side below the mode.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _check_df(d1: int, d2: int) -> None:
    if d1 < 1 or d2 < 1:
        raise ValueError(f"degrees of freedom must be positive integers, got ({d1}, {d2})")


def f_cdf(x: float, d1: int, d2: int) -> float:
    """P(F_{d1,d2} <= x)."""
    _check_df(d1, d2)
    if x < 0:
        raise ValueError("F statistic must be nonnegative")
    if x == 0:
        return 0.0
    t = d1 * x / (d1 * x + d2)
    return betainc_reg(d1 / 2.0, d2 / 2.0, t)


def _f_pdf(x: float, d1: int, d2: int) -> float:
    if x <= 0:
        return 0.0
    ln = (
        (d1 / 2.0) * math.log(d1 / d2)
        + (d1 / 2.0 - 1.0) * math.log(x)
        - ((d1 + d2) / 2.0) * math.log1p(d1 * x / d2)
        + math.lgamma((d1 + d2) / 2.0)
        - math.lgamma(d1 / 2.0)
        - math.lgamma(d2 / 2.0)
    )
    return math.exp(ln)


@lru_cache(maxsize=65536)
def f_quantile(q: float, d1: int, d2: int) -> float:
    """Inverse of f_cdf in its first argument: bracketed Newton with bisection fallback.

    Cached because the allocation engine evaluates the same (lambda, p, t-p)
    triples across every simulated trial.
    """
    _check_df(d1, d2)
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    lo, hi = 0.0, 1.0
    while f_cdf(hi, d1, d2) < q:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            raise RuntimeError("failed to bracket F quantile")
    x = 0.5 * (lo + hi)
    for _ in range(200):
        fx = f_cdf(x, d1, d2) - q
        if fx > 0:
            hi = x
        else:
            lo = x
        if abs(fx) < 1e-14 or hi - lo < 1e-15 * max(1.0, hi):
            break
        dfx = _f_pdf(x, d1, d2)
        if dfx > 0:
            step = x - fx / dfx
            x = step if lo < step < hi else 0.5 * (lo + hi)
        else:
            x = 0.5 * (lo + hi)
    return x


def normal_cdf(z: float) -> float:
    """Standard normal CDF."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def t_cdf(t: float, df: int) -> float:
    """Student's t CDF, via the incomplete beta."""
    if df < 1:
        raise ValueError("t degrees of freedom must be >= 1")
    if t == 0.0:
        return 0.5
    tail = 0.5 * betainc_reg(df / 2.0, 0.5, df / (df + t * t))
    return 1.0 - tail if t > 0 else tail


@dataclass
class CovAccumulator:
    """Running mean and scatter matrix (sum of outer products of deviations).

    Update-only: removals never downdate, since the matching algorithm always
    uses every subject observed so far. Scatter stays exactly symmetric
    because each rank-1 update is a scalar multiple of an outer product.
    """

    p: int
    count: int = 0
    mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    scatter: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.mean is None:
            self.mean = np.zeros(self.p)
        if self.scatter is None:
            self.scatter = np.zeros((self.p, self.p))

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.p,):
            raise ValueError(f"expected covariate vector of length {self.p}, got shape {x.shape}")
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.scatter = self.scatter + np.outer(delta, delta) * (self.count - 1) / self.count

    def covariance(self) -> np.ndarray:
        if self.count < 2:
            raise ValueError("covariance needs at least two points")
        return self.scatter / (self.count - 1)

    def copy(self) -> "CovAccumulator":
        return CovAccumulator(self.p, self.count, self.mean.copy(), self.scatter.copy())

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "count": self.count,
            "mean": self.mean.tolist(),
            "scatter": self.scatter.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CovAccumulator":
        return cls(
            p=d["p"],
            count=d["count"],
            mean=np.array(d["mean"], dtype=float),
            scatter=np.array(d["scatter"], dtype=float),
        )


def cov_update(acc: CovAccumulator, x: np.ndarray) -> CovAccumulator:
    """Functional update: returns a new accumulator including x."""
    out = acc.copy()
    out.update(x)
    return out


def pinv(m: np.ndarray, tolerance: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse of a symmetric matrix via eigendecomposition.

    Eigenvalues with magnitude at or below the cutoff are treated as zero;
    default cutoff is p * machine epsilon * largest |eigenvalue|.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("pinv expects a square matrix")
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    wmax = np.max(np.abs(w)) if w.size else 0.0
    cutoff = tolerance if tolerance is not None else m.shape[0] * np.finfo(float).eps * wmax
    inv_w = np.where(np.abs(w) > cutoff, np.divide(1.0, w, where=np.abs(w) > cutoff), 0.0)
    return (v * inv_w) @ v.T


@dataclass
class OlsFit:
    coefficients: np.ndarray
    coefficient_variances: np.ndarray
    residual_variance: float
    df_residual: int
    rank: int
    rank_deficient: bool


def ols(design: np.ndarray, response: np.ndarray) -> OlsFit:
    """Least squares through the normal equations with a pseudoinverse.

    Rank-deficient designs get the minimum-norm solution; df_residual is
    rows minus numerical rank of the design.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    n, q = x.shape
    if y.shape != (n,):
        raise ValueError(f"response length {y.shape} does not match {n} design rows")
    if n < 1:
        raise ValueError("need at least one observation")
    xtx = x.T @ x
    w, v = np.linalg.eigh(0.5 * (xtx + xtx.T))
    wmax = np.max(np.abs(w)) if w.size else 0.0
    cutoff = q * np.finfo(float).eps * wmax
    keep = np.abs(w) > cutoff
    rank = int(np.count_nonzero(keep))
    inv_w = np.where(keep, np.divide(1.0, w, where=keep), 0.0)
    xtx_pinv = (v * inv_w) @ v.T
    beta = xtx_pinv @ (x.T @ y)
    resid = y - x @ beta
    df = n - rank
    residual_variance = float(resid @ resid / df) if df >= 1 else 0.0
    coef_var = residual_variance * np.diag(xtx_pinv)
    return OlsFit(
        coefficients=beta,
        coefficient_variances=np.maximum(coef_var, 0.0),
        residual_variance=residual_variance,
        df_residual=df,
        rank=rank,
        rank_deficient=rank < q,
    )
