"""PIT values, the PIT-map interface, diagnostic curves and the local discrepancy score."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .distributions import Kumaraswamy, kumaraswamy_cdf, kumaraswamy_cdf_sf, kumaraswamy_logpdf

DEFAULT_GRID_SIZE = 101


class FitError(ValueError):
    """Raised when calibration data cannot support a fit."""


class NotFittedError(RuntimeError):
    pass


class BaseEvaluationError(ValueError):
    def __init__(self, row, message):
        super().__init__(f"base model failed at row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class CalibrationSet:
    features: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.responses, dtype=float).ravel()
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ValueError(f"features must be a matrix, got shape {X.shape}")
        if X.shape[0] < 1:
            raise ValueError("calibration set is empty")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} responses")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("calibration set contains non-finite entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "responses", y)

    def __len__(self):
        return self.responses.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, idx):
        return CalibrationSet(self.features[idx], self.responses[idx])


@dataclass(frozen=True)
class PitSample:
    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).ravel()
        if not np.all((z >= 0.0) & (z <= 1.0)):
            raise ValueError("PIT values must lie in [0, 1]")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    def __len__(self):
        return self.z.shape[0]


def compute_pit(base, calib):
    """PIT values ``z_i = F_hat(y_i | x_i)`` of a conditional family on a calibration set.

    ``base`` is anything with a vectorized ``cdf(y, X)``; failures are
    reported with the index of the first offending row.
    """
    X, y = calib.features, calib.responses
    try:
        z = np.asarray(base.cdf(y, X), dtype=float)
        z = np.broadcast_to(z, y.shape)
    except Exception:
        # fall back to row-by-row evaluation to locate the failure
        z = np.empty_like(y)
        for i in range(len(y)):
            try:
                z[i] = float(np.asarray(base.cdf(y[i:i + 1], X[i:i + 1])).ravel()[0])
            except Exception as exc:
                raise BaseEvaluationError(i, str(exc)) from exc
    bad = ~(np.isfinite(z) & (z >= 0.0) & (z <= 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise BaseEvaluationError(i, f"cdf returned {z[i]!r}")
    return PitSample(np.array(z))


def _broadcast(alpha, X):
    """Normalize ``(alpha, X)`` to ``(alpha2d (n, m), X2d (n, d), out_shape)``.

    * ``X`` a single point ``(d,)``: ``alpha`` of any shape is evaluated at it.
    * ``X`` of shape ``(n, d)``: ``alpha`` scalar, ``(n,)`` (pairwise) or ``(n, m)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return alpha.reshape(1, -1), X[None, :], alpha.shape
    n = X.shape[0]
    if alpha.ndim == 0:
        return np.full((n, 1), float(alpha)), X, (n,)
    if alpha.ndim == 1:
        if alpha.shape[0] != n:
            raise ValueError(f"alpha has {alpha.shape[0]} entries for {n} covariate rows")
        return alpha[:, None], X, (n,)
    if alpha.ndim == 2 and alpha.shape[0] == n:
        return alpha, X, alpha.shape
    raise ValueError(f"cannot pair alpha of shape {alpha.shape} with X of shape {X.shape}")


def _check_alpha(alpha):
    if not np.all((alpha >= 0.0) & (alpha <= 1.0)):
        raise ValueError("alpha must lie in [0, 1]")


class PitModel:
    """Covariate-dependent CDF on [0, 1]: ``(alpha, x) -> G_hat(alpha | x)``.

    Subclasses implement ``_cdf_rows`` (and optionally ``_pdf_rows``) on
    ``alpha`` of shape ``(n, m)`` against ``X`` of shape ``(n, d)``.
    """

    kind = "abstract"
    fitted = True

    def _require_fitted(self):
        if not self.fitted:
            raise NotFittedError(f"{type(self).__name__} has not been fitted")

    def cdf(self, alpha, X):
        self._require_fitted()
        a2, X2, shape = _broadcast(alpha, X)
        _check_alpha(a2)
        return self._cdf_rows(a2, X2).reshape(shape)

    def pdf(self, alpha, X):
        self._require_fitted()
        a2, X2, shape = _broadcast(alpha, X)
        _check_alpha(a2)
        return self._pdf_rows(a2, X2).reshape(shape)

    def cdf_sf(self, alpha, s, X):
        """``(G, 1 - G)`` with ``s = 1 - alpha`` passed separately.

        The default derives ``1 - G`` from ``G``; maps that can do better in
        the upper tail override ``_cdf_sf_rows``.
        """
        self._require_fitted()
        a2, X2, shape = _broadcast(alpha, X)
        s2, _, _ = _broadcast(s, X)
        _check_alpha(a2)
        G, S = self._cdf_sf_rows(a2, s2, X2)
        return G.reshape(shape), S.reshape(shape)

    def _cdf_sf_rows(self, alpha, s, X):
        G = self._cdf_rows(alpha, X)
        return G, 1.0 - G

    def _pdf_rows(self, alpha, X, step=1e-4):
        # central difference, one-sided at the ends, floored at 0
        lo = np.clip(alpha - step, 0.0, 1.0)
        hi = np.clip(alpha + step, 0.0, 1.0)
        dens = (self._cdf_rows(hi, X) - self._cdf_rows(lo, X)) / (hi - lo)
        return np.maximum(dens, 0.0)

    def at(self, x):
        """The map at one covariate vector, as a 1-D object with ``cdf``/``pdf``."""
        self._require_fitted()
        return LocalMap(self, np.asarray(x, dtype=float).ravel())


class LocalMap:
    def __init__(self, model, x):
        self.model = model
        self.x = x

    def cdf(self, alpha):
        return self.model.cdf(alpha, self.x)

    def pdf(self, alpha):
        return self.model.pdf(alpha, self.x)

    def cdf_sf(self, alpha, s):
        return self.model.cdf_sf(alpha, s, self.x)


class IdentityMap(PitModel):
    """``G_hat(alpha | x) = alpha``: the calibrated-base map."""

    kind = "identity"

    def _cdf_rows(self, alpha, X):
        return np.broadcast_to(alpha, (X.shape[0], alpha.shape[1])).copy()

    def _pdf_rows(self, alpha, X):
        return np.ones((X.shape[0], alpha.shape[1]))


class KumaraswamyMap(PitModel):
    """Covariate-independent Kumaraswamy map with fixed ``(a, b)``."""

    kind = "kumaraswamy"

    def __init__(self, a, b):
        self.a = float(a)
        self.b = float(b)

    def _cdf_rows(self, alpha, X):
        return np.broadcast_to(kumaraswamy_cdf(alpha, self.a, self.b), (X.shape[0], alpha.shape[1])).copy()

    def _pdf_rows(self, alpha, X):
        return np.broadcast_to(np.exp(kumaraswamy_logpdf(alpha, self.a, self.b)), (X.shape[0], alpha.shape[1])).copy()

    def _cdf_sf_rows(self, alpha, s, X):
        G, S = kumaraswamy_cdf_sf(alpha, s, self.a, self.b)
        shape = (X.shape[0], alpha.shape[1])
        return np.broadcast_to(G, shape).copy(), np.broadcast_to(S, shape).copy()

    def at(self, x):
        return Kumaraswamy(self.a, self.b)


@dataclass
class DiagnosticCurve:
    alphas: np.ndarray
    values: np.ndarray
    x: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.alphas.shape != self.values.shape:
            raise ValueError("alphas and values must have the same shape")

    def failure_mode(self, tol=1e-3):
        """Advisory label from signed areas between the curve and the diagonal.

        A curve above the diagonal on both halves means the base puts too much
        mass on large outcomes ("positive bias"); an S-shape below then above
        means the base is too wide ("overdispersion").
        """
        order = np.argsort(self.alphas)
        a, v = self.alphas[order], self.values[order]
        d = v - a
        lower = a <= 0.5
        upper = a >= 0.5
        lo_area = np.trapezoid(d[lower], a[lower]) if lower.sum() > 1 else 0.0
        hi_area = np.trapezoid(d[upper], a[upper]) if upper.sum() > 1 else 0.0
        if abs(lo_area) < tol and abs(hi_area) < tol:
            return "calibrated"
        if lo_area >= 0 and hi_area >= 0:
            return "positive bias"
        if lo_area <= 0 and hi_area <= 0:
            return "negative bias"
        if lo_area < 0 < hi_area:
            return "overdispersion"
        return "underdispersion"

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "g_hat"])
            for a, v in zip(self.alphas, self.values):
                w.writerow([repr(float(a)), repr(float(v))])


def alpha_grid(grid_size=DEFAULT_GRID_SIZE):
    if grid_size < 2:
        raise ValueError(f"grid_size must be at least 2, got {grid_size}")
    return np.linspace(0.0, 1.0, int(grid_size))


def diagnostic_curve(model, x, grid_size=DEFAULT_GRID_SIZE):
    alphas = alpha_grid(grid_size)
    if not getattr(model, "fitted", True):
        raise NotFittedError(f"{type(model).__name__} has not been fitted")
    x = np.asarray(x, dtype=float).ravel()
    values = np.asarray(model.cdf(alphas, x), dtype=float)
    return DiagnosticCurve(alphas, values, x)


def lds(curve):
    """Local discrepancy score: mean squared gap between the curve and the diagonal."""
    if curve.alphas.size == 0:
        raise ValueError("empty diagnostic grid")
    return float(np.mean((curve.values - curve.alphas) ** 2))


def lds_many(model, X, grid_size=DEFAULT_GRID_SIZE):
    """LDS at each row of ``X`` (vectorized over rows)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    alphas = alpha_grid(grid_size)
    vals = model.cdf(np.broadcast_to(alphas, (X.shape[0], alphas.size)), X)
    return np.mean((vals - alphas) ** 2, axis=1)
