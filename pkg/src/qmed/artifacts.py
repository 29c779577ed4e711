"""Reading and writing fit artifacts and plot-ready output files."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .data import CovariateProfile
from .errors import EstimationError, SchemaError
from .outcome import RateCurve, bin_edges
from .pipeline import EstimationConfig, FitResult
from .quantreg import QuantileFit
from .sparsity import SparsityEstimate
from .mediator import MediatorModel, quantile_effect

RATE_COLUMNS = ["u_mid", "x", "x_star", "n_at_risk", "events", "rate"]
SPARSITY_COLUMNS = ["profile", "u", "x_star", "s", "epsilon", "floored"]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _num(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(columns)
        for row in rows:
            out.writerow([_num(row[c]) if isinstance(row[c], (float, np.floating)) else
                          (int(row[c]) if isinstance(row[c], (bool, np.bool_)) else row[c]) for c in columns])


def read_rows(path):
    if not Path(path).exists():
        raise EstimationError(f"fit artifact is incomplete: {path} is missing")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def rate_file(directory, x: int, x_star: int) -> Path:
    return Path(directory) / f"rates_x{x}_xs{x_star}.csv"


def write_fit(fit: FitResult, directory) -> list:
    """Write a fit artifact; returns the list of files written."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with_profile = bool(fit.config.covariates)
    written = []
    qf = fit.quantile_fit.to_dict()
    qf["profiles"] = [{"label": p.label, "w": list(p.w), "weight": p.weight} for p in fit.profiles]
    qf["arm_totals"] = list(fit.arm_totals)
    write_json(qf, d / "quantile_fit.json")
    written.append("quantile_fit.json")

    cols = RATE_COLUMNS + (["profile"] if with_profile else [])
    for x in (0, 1):
        for xs in (0, 1):
            rows = []
            for prof in fit.profiles:
                for row in fit.rates[prof.label, xs].to_rows():
                    if row["x"] == x:
                        rows.append({**row, "profile": prof.label})
            path = rate_file(d, x, xs)
            write_rows(path, cols, rows)
            written.append(path.name)

    rows = [row for prof in fit.profiles for row in fit.sparsity[prof.label].to_rows(prof.label)]
    write_rows(d / "sparsity.csv", SPARSITY_COLUMNS, rows)
    written.append("sparsity.csv")

    if fit.binning is not None:
        K = fit.binning.K
        edges, mids = fit.binning.edges, fit.binning.midpoints
        rows = []
        for xs in (0, 1):
            for k in range(K):
                rows.append({"x_star": xs, "bin": k + 1, "u_low": float(edges[k]), "u_high": float(edges[k + 1]),
                             "u_mid": float(mids[k]),
                             "n_x0": float(fit.summary["bin_counts"][xs][0][k]),
                             "n_x1": float(fit.summary["bin_counts"][xs][1][k])})
        write_rows(d / "binning_summary.csv", ["x_star", "bin", "u_low", "u_high", "u_mid", "n_x0", "n_x1"], rows)
        written.append("binning_summary.csv")
    return written


def read_fit(directory, config: EstimationConfig) -> FitResult:
    """Rebuild a FitResult from an artifact directory written by ``write_fit``."""
    d = Path(directory)
    qpath = d / "quantile_fit.json"
    if not qpath.exists():
        raise EstimationError(f"fit artifact is incomplete: {qpath} is missing")
    qd = json.loads(qpath.read_text())
    qfit = QuantileFit.from_dict(qd)
    profiles = [CovariateProfile(tuple(p["w"]), p["label"], p["weight"]) for p in qd["profiles"]]
    arm_totals = tuple(qd["arm_totals"])
    _, mids = bin_edges(config.K)

    rates = {}
    for xs in (0, 1):
        parts = {}
        for x in (0, 1):
            for row in read_rows(rate_file(d, x, xs)):
                label = row.get("profile", profiles[0].label)
                k = int(np.argmin(np.abs(mids - float(row["u_mid"]))))
                at, ev = parts.setdefault(label, (np.zeros((2, config.K)), np.zeros((2, config.K))))
                at[x, k] = float(row["n_at_risk"])
                ev[x, k] = float(row["events"])
        for label, (at, ev) in parts.items():
            rates[label, xs] = RateCurve(mids, xs, at, ev, config.rate_scale, config.interpolation)

    u_grid = config.u_grid
    sp_rows = read_rows(d / "sparsity.csv")
    sparsity = {}
    for prof in profiles:
        s = np.full((2, u_grid.size), np.nan)
        eps = np.full_like(s, np.nan)
        fl = np.zeros_like(s, dtype=bool)
        for row in sp_rows:
            if row["profile"] != prof.label:
                continue
            xs = int(row["x_star"])
            k = int(np.argmin(np.abs(u_grid - float(row["u"]))))
            s[xs, k], eps[xs, k], fl[xs, k] = float(row["s"]), float(row["epsilon"]), row["floored"] == "1"
        if np.isnan(s).any():
            raise EstimationError(f"sparsity.csv lacks entries for profile {prof.label!r}")
        total = sum(arm_totals)
        sparsity[prof.label] = SparsityEstimate(u_grid, s, eps, (arm_totals[0] / total, arm_totals[1] / total), fl)

    for prof in profiles:
        for xs in (0, 1):
            if (prof.label, xs) not in rates:
                raise EstimationError(f"rate files lack profile {prof.label!r}")
    model = MediatorModel(qfit, profiles, config.covariates, config.rearrange)
    q = {p.label: np.asarray(quantile_effect(model, u_grid, p.w), dtype=np.float64) for p in profiles}
    return FitResult(config, qfit, profiles, rates, sparsity, q, None, arm_totals, {})


def load_schema(name: str = "effect_curve.schema.json") -> dict:
    return json.loads(resources.files("qmed").joinpath("schemas", name).read_text())


def validate_effects(doc: dict) -> None:
    """Check an effects document against the shipped JSON schema."""
    try:
        import jsonschema
    except ImportError:  # pragma: no cover - optional at runtime
        return
    try:
        jsonschema.validate(doc, load_schema())
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"effects output fails its schema: {exc.message}") from exc
