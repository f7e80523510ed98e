"""Tropical-cyclone style post-processing: ingest sequences, fit maps, score by category.

Input is a long-format CSV with one row per (storm, forecast time, timestep).
Real SHIPS/NHC files are not bundled; :func:`generate_tc_rows` writes a
synthetic stand-in with the same schema.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import ConstantFamily, Gaussian
from .nn import TemporalMixer, TrainConfig
from .nonparametric import fit_nonparametric
from .parametric import fit_parametric
from .pit import CalibrationSet, compute_pit
from .recalibrate import recalibrated_means
from .scoring import crps_grid_batch, pct_change

NULL_SENTINEL = 9999.0
TIMESTEPS = ("t-12", "t-6", "t")
TC_THRESHOLD_KT = 34.0

# 13 environmental predictors followed by the current intensity
SHIPS_PREDICTORS = (
    "vmax_kt",
    "shear_850_200_kt10",
    "shear_850_200_ring_kt10",
    "shear_vortex_removed_kt10",
    "rh_850_700_pct",
    "rh_700_500_pct",
    "rh_500_300_pct",
    "mpi_kt",
    "u200_kt10",
    "intensity_change_kt",
    "dist_land_km",
    "lat_deg10",
    "lon_deg10",
)
PREDICTORS = SHIPS_PREDICTORS + ("intensity_kt",)
COLUMNS = ("storm_id", "date", "hour", "timestep") + PREDICTORS + (
    "target_error_kt", "intensity_change_24h_kt", "year")

CATEGORIES = ("Overall", "TS", "Cat1-2", "Cat3-5", "RI", "RW")
METHODS = ("base", "parametric", "nonparametric")


@dataclass(frozen=True)
class StormSequence:
    storm_id: str
    date: str
    hour: int
    year: int
    predictors: np.ndarray  # (3, 14), rows ordered t-12, t-6, t
    target_error: float
    change_24h: float

    @property
    def intensity(self):
        return float(self.predictors[-1, -1])


@dataclass
class IngestReport:
    sequences: list = field(default_factory=list)
    dropped: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)  # (line number, message)
    imputed: int = 0

    def drop(self, reason):
        self.dropped[reason] = self.dropped.get(reason, 0) + 1


def _parse_value(text):
    text = text.strip()
    if text == "":
        return math.nan
    v = float(text)
    if v == NULL_SENTINEL or not math.isfinite(v):
        return math.nan
    return v


def ingest_sequences(path, min_intensity=TC_THRESHOLD_KT):
    """Read a sequence CSV, applying the null, imputation and storm-stage rules.

    * A predictor null (9999 or empty) at all three timesteps drops the sequence.
    * A missing target error or 24-hour change drops the sequence.
    * A partial null takes the previous timestep's value; a null at the
      first timestep takes the next available value.
    * Sequences whose intensity at ``t`` is not above ``min_intensity``
      (tropical depressions) are dropped.

    Malformed rows and incomplete sequences go to ``report.errors`` with
    their line numbers. Only an unreadable file raises.
    """
    report = IngestReport()
    groups = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != COLUMNS:
            raise ValueError(f"{path}: header does not match the sequence schema {list(COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(COLUMNS):
                report.errors.append((lineno, f"expected {len(COLUMNS)} fields, got {len(row)}"))
                continue
            rec = dict(zip(COLUMNS, (c.strip() for c in row)))
            if rec["timestep"] not in TIMESTEPS:
                report.errors.append((lineno, f"unknown timestep {rec['timestep']!r}"))
                continue
            try:
                values = [_parse_value(rec[c]) for c in PREDICTORS]
                target = _parse_value(rec["target_error_kt"])
                change = _parse_value(rec["intensity_change_24h_kt"])
                hour = int(rec["hour"])
                year = int(rec["year"])
            except ValueError as exc:
                report.errors.append((lineno, f"non-numeric field: {exc}"))
                continue
            key = (rec["storm_id"], rec["date"], hour)
            slot = groups.setdefault(key, {"lines": [], "year": year, "steps": {}})
            if rec["timestep"] in slot["steps"]:
                report.errors.append((lineno, f"duplicate timestep {rec['timestep']} for {key}"))
                continue
            slot["lines"].append(lineno)
            slot["steps"][rec["timestep"]] = (values, target, change)

    for key, slot in groups.items():
        steps = slot["steps"]
        if len(steps) != len(TIMESTEPS):
            missing = [t for t in TIMESTEPS if t not in steps]
            report.errors.append((slot["lines"][0], f"sequence {key} missing timesteps {missing}"))
            continue
        S = np.array([steps[t][0] for t in TIMESTEPS], dtype=float)
        _, target, change = steps["t"]
        if not math.isfinite(target):
            report.drop("missing target")
            continue
        if not math.isfinite(change):
            report.drop("missing 24h change")
            continue
        null = np.isnan(S)
        if null.all(axis=0).any():
            report.drop("predictor null at all timesteps")
            continue
        report.imputed += int(null.sum())
        S = _fill(S)
        if not S[-1, -1] > min_intensity:
            report.drop("not a tropical cyclone at t")
            continue
        report.sequences.append(StormSequence(key[0], key[1], key[2], slot["year"], S, target, change))
    return report


def _fill(S):
    S = S.copy()
    for i in range(1, S.shape[0]):
        gap = np.isnan(S[i])
        S[i, gap] = S[i - 1, gap]
    for i in range(S.shape[0] - 2, -1, -1):
        gap = np.isnan(S[i])
        S[i, gap] = S[i + 1, gap]
    return S


def categorize(seq):
    """Intensity class at ``t`` plus RI/RW from the realized 24-hour change."""
    v = seq.intensity
    tags = {"TS" if v <= 63.0 else "Cat1-2" if v <= 95.0 else "Cat3-5"}
    if seq.change_24h >= 30.0:
        tags.add("RI")
    elif seq.change_24h <= -30.0:
        tags.add("RW")
    return frozenset(tags)


def base_error_model(mean=0.0, sd=10.0):
    """Gaussian error model ``x -> N(mean, sd^2)``, the same for every sequence."""
    if not (math.isfinite(sd) and sd > 0.0):
        raise ValueError(f"base sd must be positive, got {sd}")
    return ConstantFamily(Gaussian(mean, sd))


def estimate_base_sigma(errors, method="sd"):
    """Base scale from calibration-era errors.

    ``"sd"`` is the sample standard deviation. ``"mae"`` converts the mean
    absolute error to a Gaussian scale with ``sigma = MAE * sqrt(pi / 2)``.
    """
    e = np.asarray(errors, dtype=float)
    if e.size < 2:
        raise ValueError("need at least two errors to estimate a scale")
    if method == "sd":
        return float(np.std(e, ddof=1))
    if method == "mae":
        return float(np.mean(np.abs(e)) * math.sqrt(math.pi / 2.0))
    raise ValueError(f"unknown sigma method {method!r}")


def feature_matrix(sequences, stats=None):
    """Flatten each 3x14 sequence after per-predictor standardization.

    ``stats`` is ``(mean, scale)`` over predictors; pass the calibration
    era's to transform test data consistently.
    """
    S = np.stack([s.predictors for s in sequences])
    if stats is None:
        flat = S.reshape(-1, S.shape[2])
        scale = flat.std(axis=0)
        stats = (flat.mean(axis=0), np.where(scale > 1e-12, scale, 1.0))
    Z = (S - stats[0]) / stats[1]
    return Z.reshape(Z.shape[0], -1), stats


def split_eras(sequences, calib_years, test_years):
    c0, c1 = calib_years
    t0, t1 = test_years
    if not (c1 < t0 or t1 < c0):
        raise ValueError(f"calibration era {calib_years} overlaps test era {test_years}")
    calib = [s for s in sequences if c0 <= s.year <= c1]
    test = [s for s in sequences if t0 <= s.year <= t1]
    return calib, test


def default_tc_configs(seed=0):
    return {
        "parametric": TrainConfig(epochs=200, weight_decay=5.0, hidden=(32, 32, 32), seed=seed),
        "nonparametric": TrainConfig(epochs=200, lr=5e-3, seed=seed),
    }


@dataclass
class TcEvaluation:
    rows: list
    counts: dict
    base_sigma: float
    models: dict

    def value(self, category, method, metric):
        for r in self.rows:
            if (r["category"], r["method"], r["metric"]) == (category, method, metric):
                return r["value"]
        raise KeyError((category, method, metric))


def evaluate_table(sequences, calib_years, test_years, methods=("parametric", "nonparametric"),
                   configs=None, base_mean=0.0, base_sigma=None, sigma_method="sd",
                   crps_grid=1024, fitted=None):
    """Fit maps on the calibration era and score the test era by category.

    Emits rows ``(category, method, metric, value, pct_change_vs_base)`` with
    metrics ``crps_x100`` and ``rmse``. The base row is always present;
    categories with no test sequences carry ``None`` values. ``fitted`` maps
    extra method names to already-fitted maps, which are scored as they are.
    """
    calib, test = split_eras(sequences, calib_years, test_years)
    if len(calib) < 2 or not test:
        raise ValueError(f"need calibration and test sequences, got {len(calib)} and {len(test)}")
    configs = {**default_tc_configs(), **(configs or {})}
    if base_sigma is None:
        base_sigma = estimate_base_sigma([s.target_error for s in calib], sigma_method)
    base = base_error_model(base_mean, base_sigma)

    Xc, stats = feature_matrix(calib)
    Xt, _ = feature_matrix(test, stats)
    yc = np.array([s.target_error for s in calib])
    yt = np.array([s.target_error for s in test])
    cal = CalibrationSet(Xc, yc)
    pit = compute_pit(base, cal)

    mixer = TemporalMixer(len(TIMESTEPS), len(PREDICTORS))
    models = {}
    for m in methods:
        if m == "parametric":
            models[m] = fit_parametric(cal, pit, configs[m], mixer=mixer)
        elif m == "nonparametric":
            models[m] = fit_nonparametric(cal, pit, configs[m], mixer=mixer)
        else:
            raise ValueError(f"unknown method {m!r}")
    models.update(fitted or {})
    methods = tuple(models)

    d = base.dist
    lower = min(float(yt.min()), float(d.quantile(1e-6))) - base_sigma
    upper = max(float(yt.max()), float(d.quantile(1.0 - 1e-6))) + base_sigma
    scores = {}
    for m in ("base",) + tuple(methods):
        model = models.get(m)
        if model is None:
            cdf = lambda Y: d.cdf(Y)  # noqa: E731
        else:
            cdf = lambda Y, model=model: model.cdf(d.cdf(Y), Xt)  # noqa: E731
        crps = crps_grid_batch(cdf, yt, lower, upper, crps_grid)
        means = recalibrated_means(model, base, Xt)
        scores[m] = (crps, means)

    tags = [categorize(s) for s in test]
    masks = {c: np.array([c == "Overall" or c in t for t in tags]) for c in CATEGORIES}
    rows = []
    for c in CATEGORIES:
        mask = masks[c]
        base_vals = None
        for m in ("base",) + tuple(methods):
            crps, means = scores[m]
            if mask.any():
                vals = {"crps_x100": 100.0 * float(np.mean(crps[mask])),
                        "rmse": float(np.sqrt(np.mean((means[mask] - yt[mask]) ** 2)))}
            else:
                vals = {"crps_x100": None, "rmse": None}
            if m == "base":
                base_vals = vals
            for metric in ("crps_x100", "rmse"):
                v, b = vals[metric], base_vals[metric]
                pc = None if m == "base" or v is None else pct_change(b, v)
                rows.append({"category": c, "method": m, "metric": metric, "value": v,
                             "pct_change_vs_base": pc})
    counts = {c: int(masks[c].sum()) for c in CATEGORIES}
    return TcEvaluation(rows, counts, base_sigma, models)


def generate_tc_rows(n_storms=300, seed=0, years=(2000, 2022), bias=5.0, null_rate=0.01):
    """Synthetic storms in the sequence CSV schema, as a list of row dicts.

    Predictors follow smooth random paths. Intensity is pulled toward the
    potential intensity, held back by shear and dry air, and decays after
    landfall. The true 24-hour forecast error is
    ``N(-bias + signal(S), scale(S)^2)``, so a zero-mean base model is
    biased by ``+bias`` knots and miscalibrated in spread. ``null_rate``
    sprinkles 9999 sentinels over the environmental predictor cells.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n_storms):
        year = int(rng.integers(years[0], years[1] + 1))
        length = int(rng.integers(10, 22))

        def smooth(scale, mean, rho=0.9):
            x = np.empty(length)
            x[0] = rng.normal()
            for i in range(1, length):
                x[i] = rho * x[i - 1] + math.sqrt(1 - rho * rho) * rng.normal()
            return mean + scale * x

        shear = np.abs(smooth(80.0, 150.0))
        shear_ring = np.abs(shear + smooth(20.0, 10.0))
        shear_vr = np.abs(0.8 * shear + smooth(15.0, 0.0))
        rh1, rh2, rh3 = (np.clip(smooth(8.0, m), 5, 100) for m in (70.0, 55.0, 45.0))
        mpi = np.clip(smooth(25.0, 115.0), 40, 180)
        u200 = smooth(60.0, 20.0)
        land = np.clip(rng.uniform(100.0, 1500.0) - rng.uniform(0.0, 120.0) * np.arange(length), 0.0, None)
        lat = rng.uniform(100.0, 250.0) + np.cumsum(np.abs(rng.normal(3.0, 2.0, length)))
        lon = rng.uniform(400.0, 800.0) + np.cumsum(rng.normal(4.0, 3.0, length))

        v = np.empty(length)
        v[0] = rng.uniform(35.0, 60.0)
        for i in range(1, length):
            drive = 0.15 * (mpi[i] - v[i - 1]) - 0.03 * (shear[i] - 150.0) + 0.2 * (rh2[i] - 55.0)
            if land[i] == 0.0:
                drive = -0.2 * v[i - 1]
            v[i] = np.clip(v[i - 1] + drive + rng.normal(0.0, 3.0), 20.0, 175.0)

        table = np.column_stack([
            v, shear, shear_ring, shear_vr, rh1, rh2, rh3, mpi, u200,
            np.concatenate([[0.0], np.diff(v)]), land, lat, lon, v,
        ])
        for i in range(2, length - 4):
            S = table[i - 2:i + 1]
            # both drivers are centred by construction, so the mean error is -bias
            signal = -0.06 * (shear[i] - 150.0) + 0.3 * (rh2[i] - 55.0)
            scale = 3.0 + 0.06 * v[i]
            err = -bias + signal + scale * rng.normal()
            change = v[i + 4] - v[i]
            date = f"{year}{(k % 12) + 1:02d}{i // 4 + 1:02d}"
            hour = 6 * (i % 4)
            for j, ts in enumerate(TIMESTEPS):
                vals = [round(float(x), 2) for x in S[j]]
                vals[:13] = [NULL_SENTINEL if rng.uniform() < null_rate else x for x in vals[:13]]
                rows.append({
                    "storm_id": f"AL{k:03d}{year}", "date": date, "hour": hour, "timestep": ts,
                    **dict(zip(PREDICTORS, vals)),
                    "target_error_kt": round(float(err), 3),
                    "intensity_change_24h_kt": round(float(change), 2),
                    "year": year,
                })
    return rows


def write_tc_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
