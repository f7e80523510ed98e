"""Sinh-arcsinh benchmark: data, the exact PIT-CDF, convergence study and PCA/LDS map.

Covariates ``x = (mu, sigma, eps, delta)`` are drawn uniformly from
``[-2, 2] x (0, 2] x [-2, 2] x (0, 2]`` and ``y | x`` follows the sinh-arcsinh
law with those parameters. The base model is the standard normal for every
``x``, so the exact PIT-CDF is ``G(alpha | x) = S_x(Phi^{-1}(alpha))``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .distributions import ConstantFamily, Gaussian, SinhArcsinh, norm_cdf, norm_pdf, norm_ppf
from .nn import TrainConfig
from .nonparametric import fit_nonparametric
from .parametric import fit_parametric
from .pit import CalibrationSet, PitModel, compute_pit, lds_many
from .scoring import ise_pit

log = logging.getLogger(__name__)

BOX_LOW = np.array([-2.0, 0.0, -2.0, 0.0])
BOX_HIGH = np.array([2.0, 2.0, 2.0, 2.0])

# Two fixed evaluation points: a right-shifted, left-skewed, heavy-tailed law
# and a left-shifted, narrow, right-skewed, light-tailed one.
TEST_POINTS = {
    "D": (1.0, 1.5, -1.0, 0.6),
    "E": (-1.0, 0.6, 1.0, 1.6),
}

METHODS = ("parametric", "nonparametric", "true")
_METHOD_CODES = {"parametric": 1, "nonparametric": 2, "true": 3}

STANDARD_NORMAL_BASE = ConstantFamily(Gaussian(0.0, 1.0))


@dataclass(frozen=True)
class SasDesign:
    n: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"sample size must be positive, got {self.n}")


def sample_box(rng, n, low=None, high=None):
    low = BOX_LOW if low is None else np.asarray(low, dtype=float)
    high = BOX_HIGH if high is None else np.asarray(high, dtype=float)
    u = rng.uniform(size=(n, 4))
    x = low + u * (high - low)
    # sigma and delta live on (0, 2]; map a zero draw to the upper end
    x[:, [1, 3]] = np.where(x[:, [1, 3]] <= 0.0, high[[1, 3]], x[:, [1, 3]])
    return x


def in_box(X):
    X = np.atleast_2d(X)
    return (
        (X[:, 0] >= -2) & (X[:, 0] <= 2) & (X[:, 1] > 0) & (X[:, 1] <= 2)
        & (X[:, 2] >= -2) & (X[:, 2] <= 2) & (X[:, 3] > 0) & (X[:, 3] <= 2)
    )


def sas_cdf(y, X):
    """Row-wise sinh-arcsinh CDF; ``X`` columns are ``(mu, sigma, eps, delta)``."""
    X = np.atleast_2d(X)
    mu, sigma, eps, delta = (X[:, i] for i in range(4))
    y = np.asarray(y, dtype=float)
    if y.ndim == 2:
        mu, sigma, eps, delta = (v[:, None] for v in (mu, sigma, eps, delta))
    with np.errstate(over="ignore", invalid="ignore"):
        s = delta * np.arcsinh((y - mu) / sigma) - eps
        return norm_cdf(np.sinh(s))


def sas_pdf(y, X):
    X = np.atleast_2d(X)
    mu, sigma, eps, delta = (X[:, i] for i in range(4))
    y = np.asarray(y, dtype=float)
    if y.ndim == 2:
        mu, sigma, eps, delta = (v[:, None] for v in (mu, sigma, eps, delta))
    z = (y - mu) / sigma
    with np.errstate(over="ignore", invalid="ignore"):
        s = delta * np.arcsinh(z) - eps
        dens = norm_pdf(np.sinh(s)) * np.cosh(s) * delta / (sigma * np.hypot(1.0, z))
    return np.where(np.isfinite(dens), dens, 0.0)


def sas_quantile(u, X):
    X = np.atleast_2d(X)
    mu, sigma, eps, delta = (X[:, i] for i in range(4))
    w = norm_ppf(u)
    with np.errstate(over="ignore", invalid="ignore"):
        return mu + sigma * np.sinh((np.arcsinh(w) + eps) / delta)


def _mirror(X):
    """Parameters of ``-Y`` when ``Y`` has SAS parameters ``X``: ``(-mu, sigma, -eps, delta)``."""
    M = np.array(np.atleast_2d(X), dtype=float)
    M[:, [0, 2]] *= -1.0
    return M


class SasFamily:
    """The true conditional law ``F(y | x)`` of the benchmark."""

    def at(self, x):
        return SinhArcsinh(*np.asarray(x, dtype=float).ravel()[:4])

    def cdf(self, y, X):
        return sas_cdf(y, X)

    def pdf(self, y, X):
        return sas_pdf(y, X)


SAS_TRUTH = SasFamily()


def gen_sas_dataset(design, rng=None, box_low=None, box_high=None):
    """Draw ``design.n`` pairs; ``y`` by inverse-CDF sampling at each ``x``.

    With ``delta`` close to 0 the law's quantiles overflow float64; such
    rows are redrawn (both ``x`` and ``y``) until every response is finite.
    ``box_low``/``box_high`` optionally shrink the covariate box.
    """
    rng = rng if rng is not None else np.random.default_rng(design.seed)
    X = np.empty((design.n, 4))
    y = np.empty(design.n)
    todo = np.arange(design.n)
    while todo.size:
        Xi = sample_box(rng, todo.size, box_low, box_high)
        u = rng.uniform(size=todo.size)
        u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
        yi = sas_quantile(u, Xi)
        X[todo], y[todo] = Xi, yi
        todo = todo[~np.isfinite(yi)]
    return CalibrationSet(X, y)


def true_pit_cdf(alpha, x):
    """Exact ``G(alpha | x) = F(Phi^{-1}(alpha) | x)`` for the standard normal base."""
    alpha = np.asarray(alpha, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return sas_cdf(norm_ppf(alpha), np.asarray(x, dtype=float))


class TruePitModel(PitModel):
    """The exact PIT-CDF of the benchmark as a :class:`PitModel`."""

    kind = "true"

    def _cdf_rows(self, alpha, X):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = sas_cdf(norm_ppf(alpha), X)
        out = np.where(alpha <= 0.0, 0.0, np.where(alpha >= 1.0, 1.0, out))
        return out

    def _cdf_sf_rows(self, alpha, s, X):
        # the normal score comes from whichever tail is not rounded away
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            w = np.where(alpha <= 0.5, norm_ppf(alpha), -norm_ppf(s))
            return sas_cdf(w, X), sas_cdf(-w, _mirror(X))

    def _pdf_rows(self, alpha, X):
        inner = np.clip(alpha, 1e-300, 1.0 - 1e-16)
        w = norm_ppf(inner)
        return sas_pdf(w, X) / norm_pdf(w)


TRUE_PIT = TruePitModel()


@dataclass
class ConvergenceSpec:
    n_grid: tuple = (5, 10, 25, 50, 100, 200)
    replicates: int = 10
    test_points: dict = field(default_factory=lambda: dict(TEST_POINTS))
    methods: tuple = METHODS
    seed: int = 0
    ise_grid: int = 2000
    parametric_config: TrainConfig = None
    nonparametric_config: TrainConfig = None

    def __post_init__(self):
        self.n_grid = tuple(int(n) for n in self.n_grid)
        problems = []
        if self.replicates < 2:
            problems.append("replicates must be at least 2")
        if list(self.n_grid) != sorted(self.n_grid):
            problems.append("N grid must be sorted")
        if any(n < 2 for n in self.n_grid):
            problems.append("every N must be at least 2")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            problems.append(f"unknown methods {sorted(unknown)}")
        if problems:
            raise ValueError("; ".join(problems))
        if not isinstance(self.test_points, dict):
            self.test_points = {f"P{i}": tuple(p) for i, p in enumerate(self.test_points)}
        if self.parametric_config is None:
            self.parametric_config = default_config("parametric")
        if self.nonparametric_config is None:
            self.nonparametric_config = default_config("nonparametric")


def default_config(method):
    if method == "parametric":
        # weight_decay is the prior strength; it is divided by N at fit time
        return TrainConfig(epochs=300, weight_decay=10.0)
    return TrainConfig(epochs=300, lr=5e-3, weight_decay=10.0)


@dataclass
class ExperimentResult:
    """Per-cell ISE records of a convergence study."""

    records: list = field(default_factory=list)

    def add(self, method, n, replicate, test_point, ise, error=""):
        self.records.append({"method": method, "N": int(n), "replicate": int(replicate),
                             "test_point": test_point, "ise": ise, "error": error})

    def summary(self):
        """Mean and sample sd of ISE per ``(method, N, test_point)``, failures skipped."""
        groups = {}
        for r in self.records:
            if r["error"]:
                continue
            groups.setdefault((r["method"], r["N"], r["test_point"]), []).append(r["ise"])
        rows = []
        for (method, n, tp), vals in sorted(groups.items(), key=lambda kv: (METHODS.index(kv[0][0]), kv[0][1], kv[0][2])):
            v = np.asarray(vals)
            rows.append({"method": method, "N": n, "test_point": tp, "mean": float(v.mean()),
                         "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0, "count": int(v.size)})
        return rows

    def mean_ise(self, method, n, test_point):
        for row in self.summary():
            if (row["method"], row["N"], row["test_point"]) == (method, n, test_point):
                return row["mean"]
        raise KeyError((method, n, test_point))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "N", "replicate", "test_point", "ise", "error"])
            for r in self.records:
                ise = "" if r["ise"] is None else repr(float(r["ise"]))
                w.writerow([r["method"], r["N"], r["replicate"], r["test_point"], ise, r["error"]])

    def summary_to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "N", "test_point", "mean", "sd", "count"])
            for r in self.summary():
                w.writerow([r["method"], r["N"], r["test_point"], repr(r["mean"]), repr(r["sd"]), r["count"]])


def cell_rng(seed, stream, n, replicate):
    """Independent generator for one experiment cell."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(n), int(replicate)]))


def fit_map(method, calib, pit, config):
    if method == "parametric":
        return fit_parametric(calib, pit, config)
    if method == "nonparametric":
        return fit_nonparametric(calib, pit, config)
    raise ValueError(f"unknown method {method!r}")


def convergence_experiment(spec, progress=None):
    """ISE of each estimator at the test points across calibration sizes and replicates.

    The calibration set of cell ``(N, replicate)`` is shared by all methods
    (its stream ignores the method); each fit gets its own seed stream.
    """
    base = Gaussian(0.0, 1.0)
    result = ExperimentResult()
    points = {k: np.asarray(v, dtype=float) for k, v in spec.test_points.items()}
    for n in spec.n_grid:
        for rep in range(spec.replicates):
            data_rng = cell_rng(spec.seed, 0, n, rep)
            calib = gen_sas_dataset(SasDesign(n), rng=data_rng)
            pit = compute_pit(STANDARD_NORMAL_BASE, calib)
            for method in spec.methods:
                if method == "true":
                    model = TRUE_PIT
                else:
                    cfg = spec.parametric_config if method == "parametric" else spec.nonparametric_config
                    fit_seed = int(cell_rng(spec.seed, _METHOD_CODES[method], n, rep).integers(2**31))
                    try:
                        model = fit_map(method, calib, pit, cfg.replace(seed=fit_seed))
                    except Exception as exc:  # recorded per cell, the study goes on
                        log.warning("fit failed: method=%s N=%d rep=%d: %s", method, n, rep, exc)
                        for tp in points:
                            result.add(method, n, rep, tp, None, f"{type(exc).__name__}: {exc}")
                        continue
                for tp, x in points.items():
                    ise = ise_pit(model.at(x).cdf, TRUE_PIT.at(x).cdf, base, spec.ise_grid)
                    result.add(method, n, rep, tp, ise)
            if progress is not None:
                progress(n, rep)
    return result


def principal_directions(X, n_components=2):
    """Top principal directions of centred data from the sample covariance.

    Returns ``(directions (k, d), variances (k,), rank_deficient)``; fewer
    than ``n_components`` rows come back when the data have lower rank.
    """
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / max(X.shape[0] - 1, 1)
    variances, vectors = np.linalg.eigh(C)
    order = np.argsort(variances)[::-1][:n_components]
    scale = max(float(np.trace(C)), 1e-300)
    keep = [i for i in order if variances[i] > 1e-12 * scale]
    dirs = vectors[:, keep].T
    # fix the sign so that results do not depend on the LAPACK build
    signs = np.sign(dirs[np.arange(len(keep)), np.argmax(np.abs(dirs), axis=1)]) if keep else np.ones(0)
    dirs = dirs * signs[:, None]
    return dirs.reshape(len(keep), X.shape[1]), variances[keep], len(keep) < n_components


def pca2_lds_map(data, model, grid_size=101):
    """Project covariates onto two principal components and attach each point's LDS."""
    X = data.features if isinstance(data, CalibrationSet) else np.asarray(data, dtype=float)
    if X.shape[0] < 3:
        raise ValueError("need at least 3 points for a principal-component map")
    dirs, variances, deficient = principal_directions(X, 2)
    scores = (X - X.mean(axis=0)) @ dirs.T
    scores -= scores.mean(axis=0)
    return {
        "pc": scores,
        "directions": dirs,
        "variances": variances,
        "rank_deficient": deficient,
        "lds": lds_many(model, X, grid_size),
    }
