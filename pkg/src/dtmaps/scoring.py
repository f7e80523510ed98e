"""Proper scoring rules (CRPS, pinball) and integrated errors for predictive distributions."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .distributions import norm_cdf, norm_pdf

DEFAULT_CRPS_GRID = 1024
TAIL_PROB = 1e-4


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScoreConfig:
    """Grid and weighting for CRPS.

    ``lower``/``upper`` of ``None`` mean "derive from the forecast's
    quantiles". ``weight_kind`` selects threshold weights ``u(t)`` on the
    outcome grid or quantile weights ``v(alpha)`` on the probability grid.
    """

    lower: Optional[float] = None
    upper: Optional[float] = None
    grid_size: int = DEFAULT_CRPS_GRID
    weight_kind: str = "none"
    weight: Optional[Callable] = None

    def __post_init__(self):
        if self.grid_size < 8:
            raise ValueError(f"grid_size must be at least 8, got {self.grid_size}")
        if self.lower is not None and self.upper is not None and not self.lower < self.upper:
            raise ValueError("lower must be below upper")
        if self.weight_kind not in ("none", "threshold", "quantile"):
            raise ValueError(f"unknown weight kind {self.weight_kind!r}")
        if self.weight_kind != "none" and self.weight is None:
            raise ValueError(f"weight kind {self.weight_kind!r} needs a weight function")


def gaussian_crps(mean, sd, y):
    """Closed-form CRPS of ``N(mean, sd^2)`` at ``y``."""
    z = (np.asarray(y, dtype=float) - mean) / sd
    return sd * (z * (2.0 * norm_cdf(z) - 1.0) + 2.0 * norm_pdf(z) - 1.0 / math.sqrt(math.pi))


def _default_bounds(dist, y, grid_size):
    lo_q = float(dist.quantile(TAIL_PROB))
    hi_q = float(dist.quantile(1.0 - TAIL_PROB))
    lo, hi = min(y, lo_q), max(y, hi_q)
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (grid_size - 1)
    return lo - step, hi + step


def crps_on_grid(cdf, y, lower, upper, grid_size=DEFAULT_CRPS_GRID, weight=None):
    """Grid estimate of ``int (F(t) - 1{y <= t})^2 u(t) dt`` over ``[lower, upper]``.

    Midpoint rule on ``grid_size - 1`` equal cells; the cell holding ``y`` is
    split at ``y`` so the indicator jump is integrated exactly.
    """
    edges = np.linspace(lower, upper, grid_size)
    j = int(np.clip(np.searchsorted(edges, y) - 1, 0, grid_size - 2))
    if lower <= y <= upper:
        nodes = np.concatenate([edges[: j + 1], [y], edges[j + 1:]])
    else:
        nodes = edges
    mids = 0.5 * (nodes[1:] + nodes[:-1])
    widths = np.diff(nodes)
    F = np.asarray(cdf(mids), dtype=float)
    integrand = (F - (y <= mids)) ** 2
    if weight is not None:
        integrand = integrand * np.asarray(weight(mids), dtype=float)
    return float(np.sum(integrand * widths))


def crps_grid_batch(cdf, ys, lower, upper, grid_size=DEFAULT_CRPS_GRID):
    """Row-wise :func:`crps_on_grid` for many forecasts sharing one outcome grid.

    ``cdf`` maps an ``(n, m)`` array of outcomes (row ``i`` belongs to
    forecast ``i``) to CDF values of the same shape. Every ``ys[i]`` must
    lie inside ``[lower, upper]``.
    """
    ys = np.asarray(ys, dtype=float).ravel()
    if np.any((ys < lower) | (ys > upper)):
        raise ValueError("outcomes outside the CRPS grid")
    n = ys.shape[0]
    edges = np.linspace(lower, upper, grid_size)
    h = edges[1] - edges[0]
    mids = 0.5 * (edges[1:] + edges[:-1])
    F = np.asarray(cdf(np.broadcast_to(mids, (n, mids.shape[0]))), dtype=float)
    full = (F - (ys[:, None] <= mids)) ** 2 * h
    j = np.clip(np.searchsorted(edges, ys) - 1, 0, grid_size - 2)
    rows = np.arange(n)
    left, right = edges[j], edges[j + 1]
    sub = np.stack([0.5 * (left + ys), 0.5 * (ys + right)], axis=1)
    Fs = np.asarray(cdf(sub), dtype=float)
    # the cell holding y is replaced by its two halves split at y
    split = Fs[:, 0] ** 2 * (ys - left) + (1.0 - Fs[:, 1]) ** 2 * (right - ys)
    return full.sum(axis=1) - full[rows, j] + split


def crps(dist, y, cfg=None):
    """CRPS of a distribution (anything with ``cdf`` and ``quantile``) at outcome ``y``.

    Unweighted and threshold-weighted scores integrate over an outcome grid;
    quantile-weighted scores integrate twice the pinball loss over
    probability levels.
    """
    cfg = cfg or ScoreConfig()
    y = float(y)
    if not math.isfinite(y):
        raise ValueError("outcome must be finite")
    if cfg.weight_kind == "quantile":
        return crps_quantile_form(dist, y, n_levels=cfg.grid_size, weight=cfg.weight)
    if cfg.lower is None or cfg.upper is None:
        lower, upper = _default_bounds(dist, y, cfg.grid_size)
        lower = lower if cfg.lower is None else cfg.lower
        upper = upper if cfg.upper is None else cfg.upper
    else:
        lower, upper = cfg.lower, cfg.upper
        if not lower <= y <= upper:
            # widen once to cover y with one step of margin, then give up
            step = (upper - lower) / (cfg.grid_size - 1)
            lower, upper = min(lower, y - step), max(upper, y + step)
            if not lower <= y <= upper:
                raise ValueError(f"outcome {y} outside the CRPS grid")
    weight = cfg.weight if cfg.weight_kind == "threshold" else None
    return crps_on_grid(dist.cdf, y, lower, upper, cfg.grid_size, weight)


def pinball(dist, y, tau):
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    q = float(dist.quantile(tau))
    return pinball_loss(q, y, tau)


def pinball_loss(q, y, tau):
    q = np.asarray(q, dtype=float)
    return (q - y) * ((y <= q).astype(float) - tau)


def crps_quantile_form(dist, y, n_levels=201, weight=None):
    """``2 * int_0^1 pinball(alpha) v(alpha) d alpha`` on a midpoint grid of levels."""
    levels = (np.arange(n_levels) + 0.5) / n_levels
    q = np.asarray(dist.quantile(levels), dtype=float)
    loss = pinball_loss(q, float(y), levels)
    if weight is not None:
        loss = loss * np.asarray(weight(levels), dtype=float)
    return float(2.0 * np.mean(loss))


def ise_pit(g_hat, g_true, base, grid_size=2000, full_output=False):
    """Integrated squared error of a recalibrated CDF computed in probability space.

    ``int_0^1 (g_hat(p) - g_true(p))^2 / f_hat(F_hat^{-1}(p)) dp`` by the
    midpoint rule; equals ``int (F_tilde(t) - F(t))^2 dt``. ``g_hat`` and
    ``g_true`` are callables on arrays of probabilities (a ``LocalMap``'s
    ``cdf`` for instance). Where the base density underflows the integrand
    is capped; ``full_output=True`` also returns the number of capped nodes.
    """
    p = (np.arange(grid_size) + 0.5) / grid_size
    diff2 = (np.asarray(g_hat(p), dtype=float) - np.asarray(g_true(p), dtype=float)) ** 2
    dens = np.asarray(base.pdf(base.quantile(p)), dtype=float)
    tiny = dens < 1e-300
    n_capped = int(tiny.sum())
    with np.errstate(divide="ignore"):
        weight = np.where(tiny, 1e300, 1.0 / np.where(tiny, 1.0, dens))
    value = float(np.mean(np.minimum(diff2 * weight, 1e300)))
    if full_output:
        return value, n_capped
    return value


def distribution_mean(dist, tol=1e-8):
    """``E[Y] = int y f(y) dy`` by adaptive quadrature over the real line."""
    med = float(dist.quantile(0.5))

    def f(t):
        return t * float(np.asarray(dist.pdf(t)))

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            left, err_l = integrate.quad(f, -np.inf, med, epsabs=tol, limit=200)
            right, err_r = integrate.quad(f, med, np.inf, epsabs=tol, limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"mean quadrature did not converge: {exc}") from exc
    return left + right


def rmse_of_mean(dists, truths, means=None):
    """RMSE of each distribution's mean against the realized values."""
    truths = np.asarray(truths, dtype=float)
    if len(dists) != truths.shape[0]:
        raise ValueError(f"{len(dists)} distributions for {truths.shape[0]} truths")
    if means is None:
        means = np.array([distribution_mean(d) for d in dists])
    return float(np.sqrt(np.mean((np.asarray(means) - truths) ** 2)))


def pct_change(base_value, value):
    return 100.0 * (value - base_value) / base_value


SCORE_COLUMNS = ("category", "method", "metric", "value", "pct_change_vs_base")


def write_score_table(rows, path):
    """Write score rows (dicts keyed by ``SCORE_COLUMNS``); ``None`` values stay empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for row in rows:
            w.writerow(["" if row.get(c) is None else _fmt(row[c]) for c in SCORE_COLUMNS])


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)
