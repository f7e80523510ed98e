"""Command-line front end.

Every command reads one JSON config (``--config``); flags override file
values, and ``DTMAPS_OUT`` may stand in for ``--out``. Failures print a JSON
error report to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import zlib

import numpy as np

from .distributions import ConstantFamily, Gaussian
from .nn import TrainConfig
from .pit import CalibrationSet, FitError, compute_pit, diagnostic_curve, lds
from .recalibrate import RecalibratedDistribution, recalibrated_means
from .scoring import crps_grid_batch, pct_change, write_score_table
from .serialization import ModelFormatError, load_model, save_model
from .synthetic import ConvergenceSpec, SasDesign, convergence_experiment, gen_sas_dataset
from .tc import (
    CATEGORIES,
    evaluate_table,
    generate_tc_rows,
    ingest_sequences,
    write_tc_csv,
)

COMMANDS = ("simulate", "fit", "diagnose", "recalibrate", "score", "convergence", "tc-eval")
STOCHASTIC = {"simulate", "fit", "convergence", "tc-eval"}
METHOD_CHOICES = ("parametric", "nonparametric")
OUT_ENV = "DTMAPS_OUT"
TRAIN_KEYS = ("lr", "epochs", "batch_size", "hidden", "floor", "weight_decay", "n_checkpoints")

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


class ConfigError(Exception):
    def __init__(self, problems):
        super().__init__("; ".join(f"{p['field']}: {p['message']}" for p in problems))
        self.problems = problems


def stream_rng(seed, name):
    """Independent generator for a named sub-stream of the master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def stream_seed(seed, name):
    return int(stream_rng(seed, name).integers(0, 2**31 - 1))


# ---------------------------------------------------------------- config


def _section_name(command):
    return command.replace("-", "_")


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError([{"field": "--config", "message": f"cannot read {path}: {exc.strerror}"}])
    except json.JSONDecodeError as exc:
        raise ConfigError([{"field": "--config", "message": f"invalid JSON: {exc}"}])
    if not isinstance(doc, dict):
        raise ConfigError([{"field": "--config", "message": "config must be a JSON object"}])
    return doc


def resolve(args, doc):
    """Merge flags over the file and validate, collecting every problem."""
    cfg = dict(doc)
    problems = []

    def bad(field, message):
        problems.append({"field": field, "message": message})

    for key in ("seed", "method"):
        if getattr(args, key) is not None:
            cfg[key] = getattr(args, key)
    cfg["out"] = args.out or os.environ.get(OUT_ENV) or doc.get("out") or "out"
    cmd = args.command
    sec = cfg.get(_section_name(cmd), {})
    if not isinstance(sec, dict):
        bad(_section_name(cmd), "must be a JSON object")
        sec = {}
    cfg["section"] = sec
    name = _section_name(cmd)

    if cmd in STOCHASTIC:
        if cfg.get("seed") is None:
            bad("seed", f"a seed is required for {cmd}")
        elif not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
            bad("seed", "must be a nonnegative integer")
    if cmd in ("fit", "tc-eval", "convergence") and "method" in cfg:
        if cfg["method"] not in METHOD_CHOICES:
            bad("method", f"must be one of {list(METHOD_CHOICES)}")
    if cmd == "fit" and cfg.get("method") is None:
        bad("method", "required for fit")

    base = cfg.get("base", {})
    if not isinstance(base, dict):
        bad("base", "must be a JSON object with mean and sd")
    else:
        if not _is_number(base.get("mean", 0.0)):
            bad("base.mean", "must be a number")
        sd = base.get("sd", 1.0)
        if not _is_number(sd) or not sd > 0:
            bad("base.sd", "must be a positive number")

    def need_file(key):
        path = sec.get(key)
        if path is None:
            bad(f"{name}.{key}", "required")
        elif not isinstance(path, str) or not os.path.isfile(path):
            bad(f"{name}.{key}", f"file not found: {path}")

    def positive_int(key, default):
        v = sec.get(key, default)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            bad(f"{name}.{key}", "must be a positive integer")

    if cmd == "simulate":
        if "n" in sec:
            positive_int("n", None)
        else:
            bad(f"{name}.n", "required")
        for key in ("box_low", "box_high"):
            v = sec.get(key)
            if v is not None and not (isinstance(v, list) and len(v) == 4 and all(_is_number(t) for t in v)):
                bad(f"{name}.{key}", "must be a list of 4 numbers (mu, sigma, eps, delta)")
        lo, hi = sec.get("box_low", [-2.0, 0.0, -2.0, 0.0]), sec.get("box_high", [2.0, 2.0, 2.0, 2.0])
        if all(isinstance(v, list) and len(v) == 4 and all(_is_number(t) for t in v) for v in (lo, hi)):
            if not all(a <= b for a, b in zip(lo, hi)) or min(lo[1], lo[3]) < 0 or min(hi[1], hi[3]) <= 0:
                bad(f"{name}.box_low", "need box_low <= box_high with sigma and delta ranges in (0, inf)")
    elif cmd == "fit":
        need_file("data")
        _check_train(sec.get("train", {}), f"{name}.train", bad)
    elif cmd == "diagnose":
        need_file("model")
        need_file("x")
        positive_int("grid_size", 101)
    elif cmd == "recalibrate":
        need_file("model")
        need_file("x")
        grid = sec.get("y_grid", {"lower": -5.0, "upper": 5.0, "n": 201})
        if not (isinstance(grid, dict) and _is_number(grid.get("lower")) and _is_number(grid.get("upper"))
                and grid["lower"] < grid["upper"] and isinstance(grid.get("n"), int) and grid["n"] >= 2):
            bad(f"{name}.y_grid", "needs numeric lower < upper and integer n >= 2")
        taus = sec.get("taus", [0.05, 0.25, 0.5, 0.75, 0.95])
        if not (isinstance(taus, list) and taus and all(_is_number(t) and 0 < t < 1 for t in taus)):
            bad(f"{name}.taus", "must be a nonempty list of levels in (0, 1)")
    elif cmd == "score":
        need_file("data")
        if sec.get("model") is not None:
            need_file("model")
        positive_int("grid_size", 1024)
    elif cmd == "convergence":
        n_grid = sec.get("n_grid", [5, 10, 25, 50, 100, 200])
        if not (isinstance(n_grid, list) and n_grid and all(isinstance(n, int) and n >= 2 for n in n_grid)
                and n_grid == sorted(n_grid)):
            bad(f"{name}.n_grid", "must be a sorted list of integers >= 2")
        positive_int("replicates", 10)
        positive_int("ise_grid", 2000)
        methods = sec.get("methods", ["parametric", "nonparametric", "true"])
        if not (isinstance(methods, list) and methods
                and set(methods) <= {"parametric", "nonparametric", "true"}):
            bad(f"{name}.methods", "must list methods from parametric, nonparametric, true")
        for m in METHOD_CHOICES:
            _check_train(sec.get(m, {}), f"{name}.{m}", bad)
    elif cmd == "tc-eval":
        if sec.get("data") is not None:
            need_file("data")
        else:
            positive_int("n_storms", 300)
        for key, default in (("calib_years", [2000, 2015]), ("test_years", [2016, 2022])):
            yrs = sec.get(key, default)
            if not (isinstance(yrs, list) and len(yrs) == 2 and all(isinstance(y, int) for y in yrs)
                    and yrs[0] <= yrs[1]):
                bad(f"{name}.{key}", "must be [first_year, last_year]")
        c, t = sec.get("calib_years", [2000, 2015]), sec.get("test_years", [2016, 2022])
        if isinstance(c, list) and isinstance(t, list) and len(c) == 2 and len(t) == 2:
            if not (c[1] < t[0] or t[1] < c[0]):
                bad(f"{name}.test_years", "overlaps the calibration era")
        methods = sec.get("methods", list(METHOD_CHOICES) if cfg.get("method") is None else [cfg["method"]])
        if not (isinstance(methods, list) and methods and set(methods) <= set(METHOD_CHOICES)):
            bad(f"{name}.methods", f"must list methods from {list(METHOD_CHOICES)}")
        if sec.get("sigma_method", "sd") not in ("sd", "mae"):
            bad(f"{name}.sigma_method", "must be 'sd' or 'mae'")
        for m in METHOD_CHOICES:
            _check_train(sec.get(m, {}), f"{name}.{m}", bad)
    if problems:
        raise ConfigError(problems)
    return cfg


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _check_train(doc, prefix, bad):
    if not isinstance(doc, dict):
        bad(prefix, "must be a JSON object")
        return
    unknown = sorted(set(doc) - set(TRAIN_KEYS))
    if unknown:
        bad(prefix, f"unknown keys {unknown}")
    try:
        TrainConfig(**{k: v for k, v in doc.items() if k in TRAIN_KEYS})
    except (ValueError, TypeError) as exc:
        for part in str(exc).split("; "):
            bad(prefix, part)


def _train_config(doc, seed, defaults=None):
    base = defaults.to_dict() if defaults is not None else {}
    base.update({k: v for k, v in doc.items() if k in TRAIN_KEYS})
    base["seed"] = seed
    return TrainConfig(**base)


# ---------------------------------------------------------------- io


def _fmt(v):
    return repr(float(v))


def write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return len(rows)


def read_matrix(path):
    """Numeric CSV with a header; returns ``(header, array)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(c) for c in r] for r in reader if r]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def read_dataset(path):
    header, A = read_matrix(path)
    if header[-1] != "y":
        raise ValueError(f"{path}: last column must be 'y'")
    return A[:, :-1], A[:, -1]


def _base(cfg):
    b = cfg.get("base", {})
    return ConstantFamily(Gaussian(float(b.get("mean", 0.0)), float(b.get("sd", 1.0))))


def _announce(path, what):
    print(f"wrote {path}: {what}")


# ---------------------------------------------------------------- commands


def cmd_simulate(cfg):
    sec = cfg["section"]
    data = gen_sas_dataset(SasDesign(int(sec["n"]), cfg["seed"]), rng=stream_rng(cfg["seed"], "simulate"),
                           box_low=sec.get("box_low"), box_high=sec.get("box_high"))
    X, y = data.features, data.responses
    path = os.path.join(cfg["out"], "dataset.csv")
    header = [f"x{i + 1}" for i in range(X.shape[1])] + ["y"]
    n = write_rows(path, header, [list(map(float, row)) + [float(v)] for row, v in zip(X, y)])
    _announce(path, f"{n} rows")


def cmd_fit(cfg):
    from .nonparametric import fit_nonparametric
    from .parametric import fit_parametric
    from .synthetic import default_config

    sec = cfg["section"]
    X, y = read_dataset(sec["data"])
    calib = CalibrationSet(X, y)
    pit = compute_pit(_base(cfg), calib)
    method = cfg["method"]
    config = _train_config(sec.get("train", {}), stream_seed(cfg["seed"], "fit"), default_config(method))
    fit = fit_parametric if method == "parametric" else fit_nonparametric
    model = fit(calib, pit, config)
    path = os.path.join(cfg["out"], "model.json")
    save_model(model, path)
    _announce(path, f"{method} model fit on {len(calib)} pairs")


def cmd_diagnose(cfg):
    sec = cfg["section"]
    model = load_model(sec["model"])
    _, X = read_matrix(sec["x"])
    grid = int(sec.get("grid_size", 101))
    summary = []
    for i, x in enumerate(X):
        curve = diagnostic_curve(model, x, grid)
        path = os.path.join(cfg["out"], f"curve_{i:04d}.csv")
        write_rows(path, ["alpha", "g_hat"], [[float(a), float(g)] for a, g in zip(curve.alphas, curve.values)])
        _announce(path, f"diagnostic curve for x_index {i}")
        summary.append([i, float(lds(curve))])
    path = os.path.join(cfg["out"], "lds.csv")
    write_rows(path, ["x_index", "lds"], summary)
    _announce(path, f"{len(summary)} rows")


def cmd_recalibrate(cfg):
    sec = cfg["section"]
    model = load_model(sec["model"])
    base = _base(cfg)
    _, X = read_matrix(sec["x"])
    g = sec.get("y_grid", {"lower": -5.0, "upper": 5.0, "n": 201})
    ys = np.linspace(g["lower"], g["upper"], g["n"])
    taus = np.asarray(sec.get("taus", [0.05, 0.25, 0.5, 0.75, 0.95]), dtype=float)
    dens, quants = [], []
    for i, x in enumerate(X):
        rd = RecalibratedDistribution(base.at(x), model, x)
        for y, F, f in zip(ys, rd.cdf(ys), rd.pdf(ys)):
            dens.append([i, float(y), float(F), float(f)])
        for t, q in zip(taus, rd.quantile(taus)):
            quants.append([i, float(t), float(q)])
    path = os.path.join(cfg["out"], "recalibrated.csv")
    _announce(path, f"{write_rows(path, ['x_index', 'y', 'cdf', 'pdf'], dens)} rows")
    path = os.path.join(cfg["out"], "quantiles.csv")
    _announce(path, f"{write_rows(path, ['x_index', 'tau', 'quantile'], quants)} rows")


def cmd_score(cfg):
    sec = cfg["section"]
    base = _base(cfg)
    X, y = read_dataset(sec["data"])
    d = base.dist
    sd = float(d.sd)
    lower = min(float(y.min()), float(d.quantile(1e-6))) - sd
    upper = max(float(y.max()), float(d.quantile(1 - 1e-6))) + sd
    grid = int(sec.get("grid_size", 1024))
    entries = [("base", None)]
    if sec.get("model") is not None:
        model = load_model(sec["model"])
        entries.append((model.kind, model))
    rows, ref = [], {}
    for name, model in entries:
        if model is None:
            cdf = d.cdf
        else:
            cdf = lambda Y, model=model: model.cdf(d.cdf(Y), X)  # noqa: E731
        crps = float(np.mean(crps_grid_batch(cdf, y, lower, upper, grid)))
        rmse = float(np.sqrt(np.mean((recalibrated_means(model, base, X) - y) ** 2)))
        for metric, v in (("crps", crps), ("rmse", rmse)):
            ref.setdefault(metric, v)
            pc = None if model is None else pct_change(ref[metric], v)
            rows.append({"category": "Overall", "method": name, "metric": metric, "value": v,
                         "pct_change_vs_base": pc})
    path = os.path.join(cfg["out"], "scores.csv")
    write_score_table(rows, path)
    _announce(path, f"{len(rows)} rows")


def cmd_convergence(cfg):
    from .synthetic import default_config

    sec = cfg["section"]
    seed = cfg["seed"]
    spec = ConvergenceSpec(
        n_grid=tuple(sec.get("n_grid", (5, 10, 25, 50, 100, 200))),
        replicates=int(sec.get("replicates", 10)),
        methods=tuple(sec.get("methods", ("parametric", "nonparametric", "true"))),
        seed=seed,
        ise_grid=int(sec.get("ise_grid", 2000)),
        parametric_config=_train_config(sec.get("parametric", {}), 0, default_config("parametric")),
        nonparametric_config=_train_config(sec.get("nonparametric", {}), 0, default_config("nonparametric")),
    )
    result = convergence_experiment(spec)
    path = os.path.join(cfg["out"], "convergence.csv")
    result.to_csv(path)
    _announce(path, f"{len(result.records)} records")
    path = os.path.join(cfg["out"], "convergence_summary.csv")
    result.summary_to_csv(path)
    _announce(path, "mean and sd of ISE per (method, N, test_point)")


def cmd_tc_eval(cfg):
    from .tc import default_tc_configs

    sec = cfg["section"]
    seed = cfg["seed"]
    data = sec.get("data")
    if data is None:
        data = os.path.join(cfg["out"], "tc_sequences.csv")
        rows = generate_tc_rows(int(sec.get("n_storms", 300)), seed=stream_seed(seed, "tc-data"),
                                bias=float(sec.get("bias", 5.0)))
        write_tc_csv(rows, data)
        _announce(data, f"{len(rows)} synthetic sequence rows")
    report = ingest_sequences(data)
    fit_seed = stream_seed(seed, "tc-fit")
    defaults = default_tc_configs(fit_seed)
    methods = sec.get("methods", list(METHOD_CHOICES) if cfg.get("method") is None else [cfg["method"]])
    configs = {m: _train_config(sec.get(m, {}), fit_seed, defaults[m]) for m in METHOD_CHOICES}
    ev = evaluate_table(report.sequences, tuple(sec.get("calib_years", (2000, 2015))),
                        tuple(sec.get("test_years", (2016, 2022))), methods=tuple(methods),
                        configs=configs, base_mean=float(sec.get("base_mean", 0.0)),
                        base_sigma=sec.get("base_sigma"), sigma_method=sec.get("sigma_method", "sd"))
    path = os.path.join(cfg["out"], "tc_table.csv")
    write_score_table(ev.rows, path)
    _announce(path, f"{len(ev.rows)} rows")
    path = os.path.join(cfg["out"], "tc_ingest.json")
    doc = {
        "sequences": len(report.sequences),
        "dropped": report.dropped,
        "imputed_values": report.imputed,
        "errors": [{"line": ln, "message": msg} for ln, msg in report.errors],
        "test_counts": {c: ev.counts[c] for c in CATEGORIES},
        "base_sigma": ev.base_sigma,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _announce(path, "ingest report")


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "recalibrate": cmd_recalibrate,
    "score": cmd_score,
    "convergence": cmd_convergence,
    "tc-eval": cmd_tc_eval,
}


def build_parser():
    p = argparse.ArgumentParser(prog="dtmaps", description="Diagnostic transport maps for forecast calibration.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (required for stochastic commands)")
    p.add_argument("--method", choices=METHOD_CHOICES)
    p.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else config 'out', else ./out)")
    return p


def _fail(kind, message, code, problems=None):
    doc = {"status": "error", "kind": kind, "message": message}
    if problems is not None:
        doc["problems"] = problems
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args, load_config(args.config))
    except ConfigError as exc:
        return _fail("config", "invalid configuration", EXIT_CONFIG, exc.problems)
    try:
        os.makedirs(cfg["out"], exist_ok=True)
        HANDLERS[args.command](cfg)
    except (FitError, ModelFormatError, ValueError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
    except Exception as exc:  # still report machine-readably
        return _fail("internal", f"{type(exc).__name__}: {exc}", EXIT_RUNTIME)
    return 0


if __name__ == "__main__":
    sys.exit(main())
