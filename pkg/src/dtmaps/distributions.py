"""Univariate distribution kernels: Gaussian, sinh-arcsinh and Kumaraswamy.

All three expose ``cdf``, ``pdf`` and ``quantile`` as vectorized numpy
functions. Objects are frozen dataclasses and can be shared freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import special

# Endpoint guard for Kumaraswamy log-densities (PIT values can hit 0 or 1).
KUMARASWAMY_EPS = 1e-12

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class ScalarDistribution(Protocol):
    def cdf(self, y): ...

    def pdf(self, y): ...

    def quantile(self, u): ...


def _finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


def _as_finite_array(y, name="y"):
    arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _as_probability(u, *, open_interval=True):
    arr = np.asarray(u, dtype=float)
    if open_interval:
        ok = (arr > 0.0) & (arr < 1.0)
    else:
        ok = (arr >= 0.0) & (arr <= 1.0)
    if not np.all(ok):
        bounds = "(0, 1)" if open_interval else "[0, 1]"
        raise ValueError(f"probabilities must lie in {bounds}")
    return arr


def norm_cdf(z):
    return special.ndtr(z)


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z - _LOG_SQRT_2PI)


def norm_ppf(u):
    """Standard normal quantile with one Newton refinement step."""
    u = np.asarray(u, dtype=float)
    z = special.ndtri(u)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        dens = norm_pdf(z)
        step = (special.ndtr(z) - u) / dens
        refined = z - step
    ok = np.isfinite(refined) & (dens > 1e-300)
    return np.where(ok, refined, z)


@dataclass(frozen=True)
class Gaussian:
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mean", _finite("mean", self.mean))
        object.__setattr__(self, "sd", _finite("sd", self.sd))
        if self.sd <= 0:
            raise ValueError(f"sd must be positive, got {self.sd}")

    def cdf(self, y):
        y = _as_finite_array(y)
        return norm_cdf((y - self.mean) / self.sd)

    def pdf(self, y):
        y = _as_finite_array(y)
        return norm_pdf((y - self.mean) / self.sd) / self.sd

    def logcdf(self, y):
        y = _as_finite_array(y)
        return special.log_ndtr((y - self.mean) / self.sd)

    def logsf(self, y):
        y = _as_finite_array(y)
        return special.log_ndtr((self.mean - y) / self.sd)

    def logpdf(self, y):
        y = _as_finite_array(y)
        z = (y - self.mean) / self.sd
        return -0.5 * z * z - _LOG_SQRT_2PI - np.log(self.sd)

    def sf(self, y):
        y = _as_finite_array(y)
        return norm_cdf((self.mean - y) / self.sd)

    def quantile(self, u):
        u = _as_probability(u)
        return self.mean + self.sd * norm_ppf(u)

    def from_normal_score(self, w):
        """``quantile(Phi(w))`` without rounding ``Phi(w)``."""
        return self.mean + self.sd * np.asarray(w, dtype=float)


@dataclass(frozen=True)
class SinhArcsinh:
    """Four-parameter sinh-arcsinh law.

    ``cdf(t) = Phi(sinh(delta * asinh((t - mu) / sigma) - eps))``. ``eps``
    controls skewness and ``delta`` tail weight; ``(0, 1, 0, 1)`` is the
    standard normal.
    """

    mu: float = 0.0
    sigma: float = 1.0
    eps: float = 0.0
    delta: float = 1.0

    def __post_init__(self):
        for name in ("mu", "sigma", "eps", "delta"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    def _inner(self, y):
        z = (y - self.mu) / self.sigma
        return z, self.delta * np.arcsinh(z) - self.eps

    def cdf(self, y):
        y = _as_finite_array(y)
        _, s = self._inner(y)
        return norm_cdf(np.sinh(s))

    def sf(self, y):
        y = _as_finite_array(y)
        _, s = self._inner(y)
        return norm_cdf(-np.sinh(s))

    def pdf(self, y):
        y = _as_finite_array(y)
        z, s = self._inner(y)
        # d/dt of Phi(sinh(s)), s = delta*asinh(z) - eps, z = (t-mu)/sigma
        with np.errstate(over="ignore"):
            w = np.sinh(s)
            dens = norm_pdf(w) * np.cosh(s) * self.delta / (self.sigma * np.hypot(1.0, z))
        return np.where(np.isfinite(dens), dens, 0.0)

    def logcdf(self, y):
        y = _as_finite_array(y)
        _, s = self._inner(y)
        with np.errstate(over="ignore"):
            return special.log_ndtr(np.sinh(s))

    def logsf(self, y):
        y = _as_finite_array(y)
        _, s = self._inner(y)
        with np.errstate(over="ignore"):
            return special.log_ndtr(-np.sinh(s))

    def logpdf(self, y):
        y = _as_finite_array(y)
        z, s = self._inner(y)
        a = np.abs(s)
        log_cosh = a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)
        with np.errstate(over="ignore"):
            w = np.sinh(s)
            return (-0.5 * w * w - _LOG_SQRT_2PI + log_cosh + np.log(self.delta)
                    - np.log(self.sigma) - np.log(np.hypot(1.0, z)))

    def quantile(self, u):
        u = _as_probability(u)
        return self.from_normal_score(norm_ppf(u))

    def from_normal_score(self, w):
        w = np.asarray(w, dtype=float)
        with np.errstate(over="ignore"):
            return self.mu + self.sigma * np.sinh((np.arcsinh(w) + self.eps) / self.delta)


@dataclass(frozen=True)
class Kumaraswamy:
    """Kumaraswamy law on [0, 1] with ``cdf(x) = 1 - (1 - x**a)**b``."""

    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", _finite("a", self.a))
        object.__setattr__(self, "b", _finite("b", self.b))
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"a and b must be positive, got a={self.a}, b={self.b}")

    def cdf(self, x):
        x = _as_probability(x, open_interval=False)
        return kumaraswamy_cdf(x, self.a, self.b)

    def pdf(self, x):
        x = _as_probability(x, open_interval=False)
        return np.exp(kumaraswamy_logpdf(x, self.a, self.b))

    def logpdf(self, x):
        x = _as_probability(x, open_interval=False)
        return kumaraswamy_logpdf(x, self.a, self.b)

    def cdf_sf(self, x, s):
        """``(cdf, 1 - cdf)`` at ``x`` given ``s = 1 - x`` separately."""
        return kumaraswamy_cdf_sf(_as_probability(x, open_interval=False), s, self.a, self.b)

    def logpdf_ps(self, x, s):
        return kumaraswamy_logpdf_ps(_as_probability(x, open_interval=False), s, self.a, self.b)

    def logpdf_log(self, log_x, log_1mx):
        """Log-density from ``log x`` and ``log(1 - x)``, for arguments within underflow of 0 or 1."""
        return kumaraswamy_logpdf_log(np.asarray(log_x, dtype=float), np.asarray(log_1mx, dtype=float),
                                      self.a, self.b)

    def pdf_ps(self, x, s):
        return kumaraswamy_pdf_ps(_as_probability(x, open_interval=False), s, self.a, self.b)

    def quantile(self, u):
        u = _as_probability(u, open_interval=False)
        return kumaraswamy_quantile(u, self.a, self.b)

    def nll(self, z):
        """Mean negative log-likelihood of a sample."""
        return -float(np.mean(self.logpdf(z)))


# Unchecked kernels, broadcast over (x, a, b). Used by the fitted maps.

def kumaraswamy_cdf(x, a, b):
    x = np.clip(x, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        xa = np.exp(a * np.log(x))
    # 1 - (1 - x^a)^b computed as -expm1(b * log1p(-x^a)) for accuracy near 0
    with np.errstate(divide="ignore"):
        out = -np.expm1(b * np.log1p(-xa))
    return np.clip(out, 0.0, 1.0)


def _log_p(p, s):
    """``log p``, taken from the complement ``s = 1 - p`` when ``p`` is near 1."""
    p = np.asarray(p, dtype=float)
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(p <= 0.5, np.log(p), np.log1p(-s))


def _times(c, log_v):
    # c * log_v with 0 * -inf taken as 0
    with np.errstate(invalid="ignore"):
        return np.where(c == 0.0, 0.0, c * log_v)


def kumaraswamy_cdf_sf(p, s, a, b):
    """``(G, 1 - G)`` for the Kumaraswamy CDF with ``s = 1 - p`` passed separately.

    When ``p`` is within rounding of 1 its complement still carries the
    information, so both tails stay accurate.
    """
    log_p = _log_p(p, s)
    with np.errstate(divide="ignore"):
        log_q = np.log(-np.expm1(a * log_p))  # log(1 - p^a)
    return -np.expm1(b * log_q), np.exp(b * log_q)


def kumaraswamy_logpdf_ps(p, s, a, b):
    with np.errstate(divide="ignore"):
        return kumaraswamy_logpdf_log(_log_p(p, s), _log_p(s, p), a, b)


# below this log(1 - x), 1 - x**a equals a * (1 - x) to double precision
_LOG_S_LINEAR = -40.0


def kumaraswamy_logpdf_log(log_p, log_s, a, b):
    with np.errstate(divide="ignore"):
        log_q = np.where(log_s < _LOG_S_LINEAR, np.log(a) + log_s, np.log(-np.expm1(a * log_p)))
        return np.log(a) + np.log(b) + _times(a - 1.0, log_p) + _times(b - 1.0, log_q)


def kumaraswamy_pdf_ps(p, s, a, b):
    with np.errstate(over="ignore"):
        return np.exp(kumaraswamy_logpdf_ps(p, s, a, b))


def kumaraswamy_logpdf(x, a, b):
    x = np.clip(x, KUMARASWAMY_EPS, 1.0 - KUMARASWAMY_EPS)
    logx = np.log(x)
    xa = np.exp(a * logx)
    return np.log(a) + np.log(b) + (a - 1.0) * logx + (b - 1.0) * np.log1p(-xa)


def kumaraswamy_logpdf_grad(x, a, b):
    """Partial derivatives of the log-density with respect to ``a`` and ``b``."""
    x = np.clip(x, KUMARASWAMY_EPS, 1.0 - KUMARASWAMY_EPS)
    logx = np.log(x)
    xa = np.exp(a * logx)
    log1m = np.log1p(-xa)
    da = 1.0 / a + logx - (b - 1.0) * xa * logx / (1.0 - xa)
    db = 1.0 / b + log1m
    return da, db


def kumaraswamy_quantile(u, a, b):
    # (1 - (1-u)^(1/b))^(1/a)
    inner = -np.expm1(np.log1p(-np.clip(u, 0.0, 1.0)) / b)
    with np.errstate(divide="ignore"):
        return np.exp(np.log(inner) / a)


class ConstantFamily:
    """Conditional family ``x -> dist`` that ignores the covariates."""

    def __init__(self, dist):
        self.dist = dist

    def at(self, x):
        return self.dist

    def cdf(self, y, X):
        return self.dist.cdf(y)

    def pdf(self, y, X):
        return self.dist.pdf(y)

    def __repr__(self):
        return f"ConstantFamily({self.dist!r})"
