"""Batch command line front end.

Wires ingestion, smoothing, decompositions, tests, and clustering into
subcommands that write tidy CSV/JSON reports plus rendered figures into an
output directory. Configuration comes from a JSON file; ``--seed``,
``--out``, ``--input``, and dotted ``--set section.key=value`` flags
override individual fields, and the fully resolved configuration is echoed
into ``manifest.json`` so a run can be reproduced exactly.

Outputs are staged in a temporary sibling directory and promoted with a
rename once the run succeeds, so a crashed run never leaves a partially
written report. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, fields as dataclass_fields

import numpy as np

from . import __version__
from .basis import make_basis
from .cluster import cluster_report
from .curveops import integral_measure, peak, summarize
from .errors import (
    AgeCurveError,
    ConfigError,
    DataError,
    NearPeakUndefined,
    NumericError,
)
from .fpca import fpca_decompose, variance_curve
from .inference import permutation_test, t_test
from .ingest import (
    assemble_series,
    filter_mlb_cohort,
    filter_nba_cohort,
    group_records,
    load_csv,
    split_power_groups,
)
from .pace import PaceConfig, PaceModel, conditional_scores, fit_pace, reconstruct
from .smooth import default_lambda_grid, eval_curve, fit_penalized, select_lambda_gcv
from . import plots

__all__ = ["RunConfig", "resolve_config", "run", "main"]

log = logging.getLogger(__name__)

SUBCOMMANDS = ("smooth", "fpca", "pace", "permtest", "cluster", "summary",
               "simulate", "compare")

_DEFAULTS = {
    "input": None,
    "schema": {},
    "cohort": {"league": "none"},
    "basis": {"degree": 3, "interior_knots": 10, "endpoints": None},
    "lambda": {"grid": None, "fixed": None},
    "grid_size": 101,
    "fpca": {"components": None, "band_multiplier": 2.0},
    "pace": {},
    "test": {"kind": "permutation", "replications": 2000, "component": 1,
             "split": "power", "threshold": 0.150, "strict": False,
             "alternative": "two-sided", "meta_key": None,
             "group_a": None, "group_b": None},
    "cluster": {"k_range": [2, 6], "runs": 100, "restarts": 10,
                "components": 2},
    "summary": {"near_peak_fraction": 0.1},
    "simulate": {"kind": "sparse", "n_subjects": 200, "sigma2": 0.25,
                 "n_obs_range": [3, 8], "lambdas": [2.0, 0.5],
                 "eigenbasis": "poly", "age_offset": 20.0, "age_scale": 16.0},
    "compare": {"pace_dir": None, "truth": None},
    "seed": 0,
    "out": "agecurve-out",
    "figures": True,
}

_COHORT_KEYS = {
    "none": set(),
    "mlb": {"min_pa", "min_year", "age_window", "strict_gaps"},
    "nba": {"min_seasons", "age_window"},
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one run; ``lam`` mirrors the JSON key
    ``lambda``, which cannot be a Python attribute name."""

    subcommand: str
    input: object
    schema: dict
    cohort: dict
    basis: dict
    lam: dict
    grid_size: int
    fpca: dict
    pace: dict
    test: dict
    cluster: dict
    summary: dict
    simulate: dict
    compare: dict
    seed: int
    out: str
    figures: bool

    def echo(self) -> dict:
        """The configuration as it appears in manifest.json."""
        out = {}
        for f in dataclass_fields(self):
            if f.name == "subcommand":
                continue
            key = "lambda" if f.name == "lam" else f.name
            out[key] = copy.deepcopy(getattr(self, f.name))
        return out


def _apply_override(tree, dotted, raw):
    node = tree
    *path, leaf = dotted.split(".")
    for part in path:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"--set {dotted}: no section named {part!r}")
        node = node[part]
    try:
        node[leaf] = json.loads(raw)
    except json.JSONDecodeError:
        node[leaf] = raw


def resolve_config(subcommand, config_path=None, seed=None, out=None,
                   input_path=None, overrides=(), figures=None) -> RunConfig:
    """Merge defaults, the JSON config file, and flag overrides, then
    validate. Raises ConfigError carrying the full list of problems."""
    tree = copy.deepcopy(_DEFAULTS)
    if config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as fh:
                user = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config {config_path} must hold a JSON object")
        errors = []
        for key, value in user.items():
            if key not in tree:
                errors.append(f"unknown config field {key!r}")
            elif isinstance(tree[key], dict):
                if not isinstance(value, dict):
                    errors.append(f"config field {key!r} must be an object")
                else:
                    tree[key].update(value)
            else:
                tree[key] = value
        if errors:
            raise ConfigError(errors)
    for dotted, raw in overrides:
        _apply_override(tree, dotted, raw)
    if seed is not None:
        tree["seed"] = seed
    if out is not None:
        tree["out"] = out
    if input_path is not None:
        tree["input"] = input_path
    if figures is not None:
        tree["figures"] = figures

    errors = _validate(subcommand, tree)
    if errors:
        raise ConfigError(errors)
    tree["lam"] = tree.pop("lambda")
    return RunConfig(subcommand=subcommand, **tree)


def _validate(subcommand, tree) -> list:
    errors = []

    def check(cond, msg):
        if not cond:
            errors.append(msg)

    check(subcommand in SUBCOMMANDS, f"unknown subcommand {subcommand!r}")
    check(isinstance(tree["seed"], int) and not isinstance(tree["seed"], bool),
          "seed must be an integer")
    check(isinstance(tree["out"], str) and tree["out"], "out must be a path")
    check(isinstance(tree["figures"], bool), "figures must be true or false")
    check(isinstance(tree["grid_size"], int) and tree["grid_size"] >= 4,
          "grid_size must be an integer >= 4")

    needs_input = subcommand in ("smooth", "fpca", "pace", "permtest",
                                 "cluster", "summary", "compare")
    if needs_input:
        if not tree["input"]:
            errors.append(f"{subcommand} requires an input CSV path")
        elif not os.path.isfile(tree["input"]):
            errors.append(f"input file not found: {tree['input']}")

    league = tree["cohort"].get("league")
    if league not in _COHORT_KEYS:
        errors.append(f"cohort.league must be one of {sorted(_COHORT_KEYS)}")
    else:
        extra = set(tree["cohort"]) - _COHORT_KEYS[league] - {"league"}
        check(not extra, f"cohort settings not valid for {league!r}: {sorted(extra)}")

    b = tree["basis"]
    check(isinstance(b.get("degree"), int) and 1 <= b["degree"] <= 10,
          "basis.degree must be an integer in 1..10")
    ik = b.get("interior_knots")
    check(isinstance(ik, int) and ik >= 0 or isinstance(ik, list),
          "basis.interior_knots must be a count or a list of knots")
    ep = b.get("endpoints")
    if ep is not None:
        check(isinstance(ep, (list, tuple)) and len(ep) == 2 and ep[0] < ep[1],
              "basis.endpoints must be [lo, hi] with lo < hi")

    lam = tree["lambda"]
    if lam.get("fixed") is not None:
        check(isinstance(lam["fixed"], (int, float)) and lam["fixed"] >= 0,
              "lambda.fixed must be a nonnegative number")
    if lam.get("grid") is not None:
        check(isinstance(lam["grid"], list) and lam["grid"], "lambda.grid must be a list")

    t = tree["test"]
    check(t.get("kind") in ("permutation", "t"), "test.kind must be permutation or t")
    check(isinstance(t.get("replications"), int) and t["replications"] >= 1,
          "test.replications must be a positive integer")
    check(isinstance(t.get("component"), int) and t["component"] >= 1,
          "test.component must be a positive integer")
    check(t.get("split") in ("power", "meta"), "test.split must be power or meta")
    if t.get("split") == "meta":
        check(bool(t.get("meta_key")), "test.meta_key is required for a meta split")
        check(t.get("group_a") is not None and t.get("group_b") is not None,
              "test.group_a and test.group_b are required for a meta split")
    check(t.get("alternative") in ("two-sided", "less", "greater"),
          "test.alternative must be two-sided, less, or greater")

    c = tree["cluster"]
    kr = c.get("k_range")
    check(isinstance(kr, list) and len(kr) == 2 and all(isinstance(k, int) for k in kr)
          and 1 <= kr[0] <= kr[1], "cluster.k_range must be [lo, hi] integers")
    for nm in ("runs", "restarts", "components"):
        check(isinstance(c.get(nm), int) and c[nm] >= 1,
              f"cluster.{nm} must be a positive integer")

    s = tree["simulate"]
    check(s.get("kind") == "sparse", "simulate.kind must be sparse")
    check(s.get("eigenbasis") in ("poly", "affine"),
          "simulate.eigenbasis must be poly or affine")
    check(isinstance(s.get("age_offset"), (int, float)) and s["age_offset"] > 0,
          "simulate.age_offset must be positive")
    check(isinstance(s.get("age_scale"), (int, float)) and s["age_scale"] > 0,
          "simulate.age_scale must be positive")

    fr = tree["summary"].get("near_peak_fraction")
    check(isinstance(fr, (int, float)) and 0 < fr < 1,
          "summary.near_peak_fraction must be in (0, 1)")

    if subcommand == "pace" or subcommand == "compare":
        known = set(PaceConfig.__dataclass_fields__)
        unknown = set(tree["pace"]) - known
        check(not unknown, f"unknown pace settings: {sorted(unknown)}")
        if not unknown:
            try:
                _pace_config(tree["pace"], tree["seed"])
            except (ValueError, TypeError) as exc:
                errors.append(f"pace settings invalid: {exc}")
    if subcommand == "compare":
        cm = tree["compare"]
        if not cm.get("pace_dir") or not os.path.isdir(cm["pace_dir"]):
            errors.append("compare.pace_dir must name an existing pace output directory")
        if not cm.get("truth") or not os.path.isfile(cm["truth"]):
            errors.append("compare.truth must name an existing truth JSON file")
    return errors


def _pace_config(section, seed) -> PaceConfig:
    kwargs = dict(section)
    kwargs.setdefault("seed", seed)
    for key in ("bandwidth_fractions", "domain", "n_obs_range", "lambda_grid"):
        if isinstance(kwargs.get(key), list):
            kwargs[key] = tuple(kwargs[key])
    return PaceConfig(**kwargs)


# ---------------------------------------------------------------------------
# output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


class _Report:
    """Collects files inside the staging directory and writes the manifest."""

    def __init__(self, root, cfg):
        self.root = root
        self.cfg = cfg
        self.names = []

    def csv(self, name, header, rows):
        path = os.path.join(self.root, name)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        self.names.append(name)

    def json(self, name, obj):
        path = os.path.join(self.root, name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.names.append(name)

    def figure(self, name, renderer, *args, **kwargs):
        if not self.cfg.figures:
            return
        os.makedirs(os.path.join(self.root, "figures"), exist_ok=True)
        renderer(os.path.join(self.root, "figures", name), *args, **kwargs)
        self.names.append(f"figures/{name}")

    def finish(self):
        manifest = {
            "version": __version__,
            "subcommand": self.cfg.subcommand,
            "config": self.cfg.echo(),
            "outputs": sorted(self.names + ["manifest.json"]),
        }
        self.json("manifest.json", manifest)


def _promote(tmp, out):
    os.chmod(tmp, 0o755)
    if os.path.isdir(out):
        old = tmp + ".replaced"
        os.replace(out, old)
        os.replace(tmp, out)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.replace(tmp, out)


# ---------------------------------------------------------------------------
# shared pipeline stages


def _ingest(cfg):
    batch = load_csv(cfg.input, cfg.schema or None)
    league = cfg.cohort.get("league", "none")
    opts = {k: v for k, v in cfg.cohort.items() if k != "league"}
    if "age_window" in opts:
        opts["age_window"] = tuple(opts["age_window"])
    if league == "mlb":
        series = filter_mlb_cohort(batch, **opts)
        exclusions = series.exclusions
    elif league == "nba":
        series = filter_nba_cohort(batch, **opts)
        exclusions = series.exclusions
    else:
        series = assemble_series(batch)
        exclusions = []
    return batch, list(series), exclusions


def _write_ingest_reports(report, batch, exclusions):
    report.csv("rejects.csv", ["line", "player_id", "reason"],
               [(r.line, r.player_id, r.reason) for r in batch.rejects])
    report.csv("exclusions.csv", ["player_id", "season_year", "reason_code"],
               [(e.player_id, e.season_year, e.reason_code) for e in exclusions])


def _basis_and_grid(cfg, series_list):
    ep = cfg.basis.get("endpoints")
    if ep is not None:
        a, b = float(ep[0]), float(ep[1])
    else:
        a = min(float(s.times.min()) for s in series_list)
        b = max(float(s.times.max()) for s in series_list)
    ik = cfg.basis["interior_knots"]
    if isinstance(ik, int):
        knots = np.linspace(a, b, ik + 2)[1:-1]
    else:
        knots = [float(k) for k in ik]
    spec = make_basis(int(cfg.basis["degree"]), knots, (a, b))
    grid = np.linspace(a, b, int(cfg.grid_size))
    return spec, grid


def _fit_curves(cfg, series_list):
    if not series_list:
        raise DataError("no subjects survive ingestion and filtering")
    spec, grid = _basis_and_grid(cfg, series_list)
    fixed = cfg.lam.get("fixed")
    lam_grid = cfg.lam.get("grid")
    lam_grid = np.asarray(lam_grid, dtype=float) if lam_grid else default_lambda_grid()
    curves = []
    for s in series_list:
        lam = float(fixed) if fixed is not None else float(select_lambda_gcv(spec, s, lam_grid)[0])
        curves.append(fit_penalized(spec, s, lam))
    return spec, grid, curves


def _curve_values(curves, grid, deriv_order=0):
    return np.vstack([eval_curve(c, grid, deriv_order) for c in curves])


def _curve_fn(curve):
    return lambda g: eval_curve(curve, g)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_smooth(cfg, report):
    batch, series, exclusions = _ingest(cfg)
    _write_ingest_reports(report, batch, exclusions)
    spec, grid, curves = _fit_curves(cfg, series)
    report.csv("lambdas.csv", ["player_id", "lambda"],
               [(c.subject_id, c.lam) for c in curves])
    report.csv("coefficients.csv", ["player_id", "basis_index", "coefficient"],
               [(c.subject_id, j, beta)
                for c in curves for j, beta in enumerate(c.coefficients)])
    values = _curve_values(curves, grid)
    report.csv("curves.csv", ["player_id", "age", "value"],
               [(c.subject_id, t, v)
                for c, row in zip(curves, values) for t, v in zip(grid, row)])
    report.figure("curves.png", plots.spaghetti, grid, list(values))


def _fpca_model(cfg, curves, grid):
    return fpca_decompose(curves, grid, num_components=cfg.fpca.get("components"))


def _cmd_fpca(cfg, report):
    batch, series, exclusions = _ingest(cfg)
    _write_ingest_reports(report, batch, exclusions)
    spec, grid, curves = _fit_curves(cfg, series)
    model = _fpca_model(cfg, curves, grid)
    variance = variance_curve(curves, grid)
    report.csv("mean_curve.csv", ["age", "mean", "variance"],
               [(t, m, v) for t, m, v in zip(grid, model.mean, variance)])
    report.csv("eigenfunctions.csv", ["age", "component", "value"],
               [(t, k + 1, val)
                for k, psi in enumerate(model.eigenfunctions)
                for t, val in zip(grid, psi)])
    report.csv("eigenvalues.csv", ["component", "eigenvalue", "variance_share"],
               [(k + 1, lam, share)
                for k, (lam, share) in enumerate(zip(model.eigenvalues, model.varex))])
    report.csv("scores.csv", ["player_id", "component", "score"],
               [(c.subject_id, k + 1, model.scores[i, k])
                for i, c in enumerate(curves)
                for k in range(model.scores.shape[1])])
    mult = float(cfg.fpca.get("band_multiplier", 2.0))
    bands = []
    rows = []
    for k, (lam, psi) in enumerate(zip(model.eigenvalues, model.eigenfunctions)):
        offset = mult * np.sqrt(max(lam, 0.0)) * psi
        lo, hi = model.mean - offset, model.mean + offset
        bands.append((f"component {k + 1}", lo, hi))
        rows.extend((t, k + 1, m, l, h)
                    for t, m, l, h in zip(grid, model.mean, lo, hi))
    report.csv("pc_display.csv", ["age", "component", "mean", "low", "high"], rows)
    report.figure("components.png", plots.pc_display, grid, model.mean, bands)
    report.figure("mean_variance.png", plots.mean_variance, grid, model.mean, variance)


def _cmd_pace(cfg, report):
    batch, series, exclusions = _ingest(cfg)
    _write_ingest_reports(report, batch, exclusions)
    model = fit_pace(series, _pace_config(cfg.pace, cfg.seed))
    grid = model.grid
    report.csv("mean_curve.csv", ["age", "mean"],
               [(t, m) for t, m in zip(grid, model.mean)])
    report.csv("eigenfunctions.csv", ["age", "component", "value"],
               [(t, k + 1, val)
                for k, psi in enumerate(model.eigenfunctions)
                for t, val in zip(grid, psi)])
    report.csv("eigenvalues.csv", ["component", "eigenvalue"],
               [(k + 1, lam) for k, lam in enumerate(model.eigenvalues)])
    score_rows, recon_rows = [], []
    for s in series:
        xi = conditional_scores(model, s)
        score_rows.extend((s.id, k + 1, xi[k]) for k in range(xi.size))
        rec = reconstruct(model, xi)
        recon_rows.extend((s.id, t, v) for t, v in zip(grid, rec))
    report.csv("scores.csv", ["player_id", "component", "score"], score_rows)
    report.csv("reconstructions.csv", ["player_id", "age", "value"], recon_rows)
    diag = dict(model.diagnostics)
    report.json("model.json", {
        "sigma2": model.sigma2,
        "eigenvalues": model.eigenvalues,
        "J_selected": model.J_selected,
        "K": model.K,
        "domain": list(model.domain),
        "grid_size": int(grid.size),
        "bandwidth": diag.get("bandwidth"),
        "mean_lambda": diag.get("mean_lambda"),
        "n_pairs": diag.get("n_pairs"),
    })
    report.figure("model.png", plots.model_overview, grid, model.mean,
                  list(model.eigenfunctions))


def _split_series(cfg, series, batch):
    mode = cfg.test["split"]
    if mode == "power":
        split = split_power_groups(series, group_records(batch),
                                   threshold=float(cfg.test["threshold"]))
        return ("power", split.power), ("non_power", split.non_power), split.exclusions
    key = cfg.test["meta_key"]
    want_a, want_b = str(cfg.test["group_a"]), str(cfg.test["group_b"])
    a = [s for s in series if s.meta.get(key) == want_a]
    b = [s for s in series if s.meta.get(key) == want_b]
    return (want_a, a), (want_b, b), []


def _cmd_permtest(cfg, report):
    batch, series, exclusions = _ingest(cfg)
    (name_a, group_a), (name_b, group_b), split_excl = _split_series(cfg, series, batch)
    _write_ingest_reports(report, batch, exclusions + split_excl)
    if not group_a or not group_b:
        raise DataError(f"empty test group: {name_a} has {len(group_a)}, "
                        f"{name_b} has {len(group_b)} subjects")
    both = group_a + group_b
    spec, grid, curves = _fit_curves(cfg, both)
    model = _fpca_model(cfg, curves, grid)
    comp = int(cfg.test["component"])
    if comp > model.scores.shape[1]:
        raise DataError(f"test.component {comp} exceeds the {model.scores.shape[1]} "
                        "retained components")
    scores = model.scores[:, comp - 1]
    a_scores, b_scores = scores[:len(group_a)], scores[len(group_a):]
    report.csv("groups.csv", ["player_id", "group", "score"],
               [(s.id, nm, x) for nm, grp, xs in
                ((name_a, group_a, a_scores), (name_b, group_b, b_scores))
                for s, x in zip(grp, xs)])
    values = _curve_values(curves, grid)
    means = {name_a: values[:len(group_a)].mean(axis=0),
             name_b: values[len(group_a):].mean(axis=0)}
    report.csv("group_means.csv", ["age", "group", "mean"],
               [(t, nm, v) for nm in (name_a, name_b)
                for t, v in zip(grid, means[nm])])
    if cfg.test["kind"] == "t":
        res = t_test(a_scores, b_scores, alternative=cfg.test["alternative"])
        report.json("result.json", {
            "kind": "t", "statistic": res.statistic, "df": res.df,
            "p_value": res.p_value, "alternative": res.alternative,
            "component": comp, "groups": {name_a: len(group_a), name_b: len(group_b)},
        })
    else:
        res = permutation_test(a_scores, b_scores,
                               replications=int(cfg.test["replications"]),
                               seed=cfg.seed, strict=bool(cfg.test["strict"]))
        counts, edges = np.histogram(res.null_sample, bins=30)
        report.csv("null_histogram.csv", ["bin_left", "bin_right", "count"],
                   [(l, r, int(c)) for l, r, c in zip(edges[:-1], edges[1:], counts)])
        report.json("result.json", {
            "kind": "permutation", "observed_T": res.observed_T,
            "p_value": res.p_value, "replications": res.replications,
            "seed": res.seed, "exact": res.exact, "strict": res.strict,
            "component": comp, "groups": {name_a: len(group_a), name_b: len(group_b)},
        })
        report.figure("null_histogram.png", plots.null_histogram, edges, counts,
                      res.observed_T)
    report.figure("group_means.png", plots.labeled_means, grid, means)


def _cmd_cluster(cfg, report):
    batch, series, exclusions = _ingest(cfg)
    _write_ingest_reports(report, batch, exclusions)
    spec, grid, curves = _fit_curves(cfg, series)
    model = _fpca_model(cfg, curves, grid)
    ncomp = min(int(cfg.cluster["components"]), model.scores.shape[1])
    if ncomp < int(cfg.cluster["components"]):
        log.info("cluster: only %d components retained, clustering on those", ncomp)
    points = model.scores[:, :ncomp]
    lo, hi = cfg.cluster["k_range"]
    ids = [c.subject_id for c in curves]
    rep = cluster_report(points, range(lo, hi + 1), runs=int(cfg.cluster["runs"]),
                         restarts=int(cfg.cluster["restarts"]), seed=cfg.seed,
                         ids=ids)
    report.csv("assignments.csv", ["player_id", "cluster"],
               [(pid, int(c)) for pid, c in rep.assignments.items()])
    report.csv("sse.csv", ["k", "sse", "log_sse", "null_min", "null_mean"],
               [(k, s, ls, nmin, nmean) for k, s, ls, nmin, nmean in
                zip(rep.k_range, rep.actual_sse, rep.log_actual_sse,
                    rep.null_min_sse, rep.null_mean_sse)])
    values = _curve_values(curves, grid)
    derivs = _curve_values(curves, grid, deriv_order=1)
    labels = np.array([rep.assignments[pid] for pid in ids])
    rows = []
    means = {}
    for c in sorted(set(labels.tolist())):
        sel = labels == c
        m = values[sel].mean(axis=0)
        d = derivs[sel].mean(axis=0)
        means[f"cluster {c}"] = m
        rows.extend((t, c, mv, dv) for t, mv, dv in zip(grid, m, d))
    report.csv("cluster_curves.csv", ["age", "cluster", "mean", "derivative"], rows)
    report.json("report.json", {
        "selected_k": rep.selected_k, "no_structure": rep.no_structure,
        "disagreement": rep.disagreement, "k_range": list(rep.k_range),
        "actual_sse": rep.actual_sse, "log_actual_sse": rep.log_actual_sse,
        "null_min_sse": rep.null_min_sse, "null_mean_sse": rep.null_mean_sse,
        "gap_min": rep.gap_min, "gap_mean": rep.gap_mean,
        "runs": rep.runs, "restarts": rep.restarts, "seed": rep.seed,
        "components": ncomp, "n_subjects": len(ids),
    })
    report.figure("cluster_means.png", plots.labeled_means, grid, means)
    report.figure("sse.png", plots.sse_curve, list(rep.k_range), rep.actual_sse,
                  rep.null_mean_sse, rep.null_min_sse)


def _cmd_summary(cfg, report):
    batch, series, exclusions = _ingest(cfg)
    _write_ingest_reports(report, batch, exclusions)
    spec, grid, curves = _fit_curves(cfg, series)
    domain = spec.endpoints
    fraction = float(cfg.summary["near_peak_fraction"])
    rows = []
    for c in curves:
        fn = _curve_fn(c)
        try:
            s = summarize(fn, domain, fraction)
            rows.append((c.subject_id, s.peak_age, s.peak_value,
                         s.near_peak[0], s.near_peak[1], s.integral))
        except NearPeakUndefined:
            t_peak, v_peak = peak(fn, domain)
            rows.append((c.subject_id, t_peak, v_peak, None, None,
                         integral_measure(fn, domain)))
    report.csv("summaries.csv",
               ["player_id", "peak_age", "peak_value", "near_peak_start",
                "near_peak_end", "integral"], rows)
    values = _curve_values(curves, grid)
    derivs = _curve_values(curves, grid, deriv_order=1)
    mean = values.mean(axis=0)
    deriv = derivs.mean(axis=0)
    variance = variance_curve(curves, grid)
    report.csv("mean_curve.csv", ["age", "mean", "derivative", "variance"],
               [(t, m, d, v) for t, m, d, v in zip(grid, mean, deriv, variance)])
    report.figure("mean_curve.png", plots.mean_deriv_var, grid, mean, deriv, variance)


def _cmd_simulate(cfg, report):
    from .simulate import sparse_pace_dataset

    s = cfg.simulate
    series, truth = sparse_pace_dataset(
        seed=cfg.seed, n_subjects=int(s["n_subjects"]), sigma2=float(s["sigma2"]),
        n_obs_range=tuple(s["n_obs_range"]), lambdas=tuple(s["lambdas"]),
        eigenbasis=s["eigenbasis"])
    off, scale = float(s["age_offset"]), float(s["age_scale"])
    rows = []
    for subj in series:
        for j, (t, v) in enumerate(zip(subj.times, subj.values)):
            rows.append((subj.id, 2000 + j, off + scale * t, v))
    report.csv("dataset.csv", ["player_id", "season_year", "age", "value"], rows)
    tg = np.linspace(0.0, 1.0, 201)
    report.json("truth.json", {
        "kind": "sparse", "seed": cfg.seed, "age_offset": off, "age_scale": scale,
        "sigma2": float(s["sigma2"]), "lambdas": [float(l) for l in s["lambdas"]],
        "eigenbasis": s["eigenbasis"],
        "grid": off + scale * tg,
        "mean": truth["mean_fn"](tg),
        "eigenfunctions": [fn(tg) for fn in truth["psi_fns"]],
        "scores": truth["scores"],
        "subject_ids": [subj.id for subj in series],
    })


def _load_pace_model(pace_dir) -> PaceModel:
    def read_rows(name):
        with open(os.path.join(pace_dir, name), newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))

    mean_rows = read_rows("mean_curve.csv")
    grid = np.array([float(r["age"]) for r in mean_rows])
    mean = np.array([float(r["mean"]) for r in mean_rows])
    lam = np.array([float(r["eigenvalue"]) for r in read_rows("eigenvalues.csv")])
    psi = np.zeros((lam.size, grid.size))
    seen = {k: 0 for k in range(lam.size)}
    for r in read_rows("eigenfunctions.csv"):
        k = int(r["component"]) - 1
        psi[k, seen[k]] = float(r["value"])
        seen[k] += 1
    with open(os.path.join(pace_dir, "model.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    G = (psi * lam[:, None]).T @ psi
    return PaceModel(grid=grid, mean=mean, cov_surface=0.5 * (G + G.T),
                     sigma2=float(meta["sigma2"]), eigenvalues=lam,
                     eigenfunctions=psi, J_selected=int(meta["J_selected"]))


def _cmd_compare(cfg, report):
    with open(cfg.compare["truth"], encoding="utf-8") as fh:
        truth = json.load(fh)
    model = _load_pace_model(cfg.compare["pace_dir"])
    batch = load_csv(cfg.input, cfg.schema or None)
    series = {s.id: s for s in assemble_series(batch)}
    t_grid = np.asarray(truth["grid"], dtype=float)
    mean = np.interp(model.grid, t_grid, np.asarray(truth["mean"], dtype=float))
    psis = [np.interp(model.grid, t_grid, np.asarray(p, dtype=float))
            for p in truth["eigenfunctions"]]
    ise_model, ise_base = [], []
    for sid, scores in zip(truth["subject_ids"], truth["scores"]):
        subj = series.get(sid)
        if subj is None:
            raise DataError(f"dataset is missing simulated subject {sid}")
        f_true = mean.copy()
        for xi, psi in zip(scores, psis):
            f_true += xi * psi
        rec = reconstruct(model, conditional_scores(model, subj))
        base = np.interp(model.grid, subj.times, subj.values)
        ise_model.append(np.trapezoid((rec - f_true) ** 2, model.grid))
        ise_base.append(np.trapezoid((base - f_true) ** 2, model.grid))
    med_model = float(np.median(ise_model))
    med_base = float(np.median(ise_base))
    report.json("comparison.json", {
        "n_subjects": len(ise_model),
        "median_ise_model": med_model,
        "median_ise_baseline": med_base,
        "ratio": med_model / med_base if med_base > 0 else None,
        "passes": bool(med_model < med_base),
    })


_COMMANDS = {
    "smooth": _cmd_smooth,
    "fpca": _cmd_fpca,
    "pace": _cmd_pace,
    "permtest": _cmd_permtest,
    "cluster": _cmd_cluster,
    "summary": _cmd_summary,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
}


def run(cfg: RunConfig) -> str:
    """Execute one subcommand, staging outputs and promoting on success.
    Returns the output directory path."""
    out = cfg.out
    parent = os.path.dirname(os.path.abspath(out)) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".agecurve-stage-", dir=parent)
    try:
        report = _Report(tmp, cfg)
        _COMMANDS[cfg.subcommand](cfg, report)
        report.finish()
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    _promote(tmp, out)
    return out


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="agecurve",
        description="Aging-curve analysis: smoothing, functional PCA, sparse "
                    "decomposition, permutation tests, clustering, summaries.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--input", help="input CSV path")
        sp.add_argument("--seed", type=int, help="random seed (echoed in manifest)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", default=[], dest="overrides",
                        metavar="SECTION.KEY=VALUE",
                        help="override one config field, value parsed as JSON")
        sp.add_argument("--no-figures", action="store_true",
                        help="skip figure rendering")
    return parser.parse_args(argv)


def _emit_error(exc) -> None:
    messages = []
    for arg in exc.args:
        if isinstance(arg, (list, tuple)):
            messages.extend(str(m) for m in arg)
        else:
            messages.append(str(arg))
    payload = {"error": type(exc).__name__, "messages": messages or [str(exc)]}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv=None) -> int:
    args = _parse_args(argv)
    overrides = []
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep:
            _emit_error(ConfigError(f"--set needs KEY=VALUE, got {item!r}"))
            return 2
        overrides.append((key, value))
    try:
        cfg = resolve_config(args.subcommand, config_path=args.config,
                             seed=args.seed, out=args.out, input_path=args.input,
                             overrides=overrides,
                             figures=False if args.no_figures else None)
        out = run(cfg)
    except ConfigError as exc:
        _emit_error(exc)
        return 2
    except DataError as exc:
        _emit_error(exc)
        return 3
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        _emit_error(exc)
        return 4
    except AgeCurveError as exc:
        _emit_error(exc)
        return 3
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
