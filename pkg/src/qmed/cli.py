"""Command line: ``qmed simulate | fit | decompose | bootstrap``.

Exit codes: 0 success, 2 schema or usage error, 3 validation, 4 estimation,
5 inference.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (read_fit, sha256_file, validate_effects, write_fit, write_json, write_rows)
from .blb import BLBConfig, ConfidenceBand, blb_estimate
from .data import MicrodataTable, Schema, ingest_csv, write_csv
from .effects import CURVE_FIELDS, SCALED_FIELDS, EffectCurve
from .errors import EstimationError, QmedError, SchemaError
from .oracle import OracleModel, closed_forms, expected_event_rate, simulate, tilde_x_star
from .outcome import bin_edges
from .pipeline import EstimationConfig, effect_statistic, effects_from_fit, fit_pipeline

OVERALL = ("nie", "nde", "ace")


@dataclass
class RunConfig:
    input: str = None
    schema: Schema = field(default_factory=Schema)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    blb: BLBConfig = field(default_factory=BLBConfig)
    out: str = "qmed-out"

    def to_dict(self, with_out: bool = True):
        d = {"input": self.input,
             "schema": {"outcome": self.schema.outcome, "exposure": self.schema.exposure,
                        "mediator": self.schema.mediator, "covariates": list(self.schema.covariates)},
             "estimation": self.estimation.to_dict(), "blb": self.blb.to_dict()}
        if with_out:
            d["out"] = self.out
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {"input", "schema", "estimation", "blb", "out"}
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")
        sch = d.get("schema", {})
        return cls(input=d.get("input"),
                   schema=Schema(sch.get("outcome", "y"), sch.get("exposure", "x"), sch.get("mediator", "m"),
                                 tuple(sch.get("covariates", ()))),
                   estimation=EstimationConfig.from_dict(d.get("estimation", {})),
                   blb=BLBConfig(**d.get("blb", {})),
                   out=d.get("out", "qmed-out"))


def load_config(path) -> RunConfig:
    try:
        return RunConfig.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise SchemaError(f"cannot read config {path}: {exc}") from exc


def _split(s):
    return tuple(c.strip() for c in s.split(",") if c.strip())


def apply_flags(cfg: RunConfig, a) -> RunConfig:
    """Command-line flags override config-file values."""
    if getattr(a, "input", None):
        cfg.input = a.input
    if getattr(a, "out", None):
        cfg.out = a.out
    sch = cfg.schema
    cov = _split(a.covariates) if getattr(a, "covariates", None) is not None else sch.covariates
    cfg.schema = Schema(a.outcome or sch.outcome, a.exposure or sch.exposure, a.mediator or sch.mediator, cov) \
        if hasattr(a, "outcome") else sch
    est = cfg.estimation
    changes = {}
    for flag, key in (("K", "K"), ("rate_scale", "rate_scale"), ("x_for_nie", "x_for_nie"),
                      ("interpolation", "interpolation"), ("binning_mode", "binning_mode"),
                      ("density_mode", "density_mode")):
        v = getattr(a, flag, None)
        if v is not None:
            changes[key] = v
    if getattr(a, "rearrange", False):
        changes["rearrange"] = True
    if getattr(a, "interactions", None) is not None:
        changes["interactions"] = _split(a.interactions)
    # the design uses every ingested covariate unless the config names a subset
    if getattr(a, "covariates", None) is not None or not est.covariates:
        changes["covariates"] = cfg.schema.covariates
    cfg.estimation = replace(est, **changes)
    blb = {}
    for flag, key in (("blb_subsets", "S"), ("blb_b", "b"), ("blb_reps", "R"), ("seed", "seed"), ("alpha", "alpha")):
        v = getattr(a, flag, None)
        if v is not None:
            blb[key] = v
    cfg.blb = replace(cfg.blb, **blb)
    return cfg


def _data_flags(p):
    p.add_argument("--input", "-i", help="CSV file with a header row")
    p.add_argument("--config", help="JSON run configuration; flags override it")
    p.add_argument("--outcome")
    p.add_argument("--exposure")
    p.add_argument("--mediator")
    p.add_argument("--covariates", help="comma-separated covariate columns (dummy-coded)")
    p.add_argument("--interactions", help="comma-separated covariates that also enter times the exposure")
    p.add_argument("--K", type=int, help="number of quantile bins (default 50)")
    p.add_argument("--rate-scale", type=float, help="multiplier for reported rates, e.g. 100000")
    p.add_argument("--x-for-nie", type=int, choices=(0, 1))
    p.add_argument("--interpolation", choices=("linear", "spline"))
    p.add_argument("--binning-mode", choices=("residual", "cdf"))
    p.add_argument("--density-mode", choices=("average_s", "average_inverse"))
    p.add_argument("--rearrange", action="store_true", help="sort predicted quantile curves along u")
    p.add_argument("--out", "-o", help="output directory")


def _blb_flags(p):
    p.add_argument("--blb-subsets", type=int)
    p.add_argument("--blb-b", type=int)
    p.add_argument("--blb-reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmed", description="u-specific mediation effects by quantile binning")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw a synthetic table from the closed-form model")
    sim.add_argument("--n", type=int, default=100_000)
    sim.add_argument("--p-exposed", type=float, default=0.5)
    sim.add_argument("--seed", type=int, default=0)
    default = OracleModel()
    for i, name in enumerate(("alpha0", "alpha1", "alpha2", "alpha3")):
        sim.add_argument(f"--{name}", type=float, default=default.alpha[i])
    for i, name in enumerate(("beta0", "beta1", "beta2")):
        sim.add_argument(f"--{name}", type=float, default=default.beta[i])
    sim.add_argument("--sigma-exponent", type=float, default=default.sigma_exponent)
    sim.add_argument("--outcome-type", choices=("bernoulli", "expected"), default="bernoulli")
    sim.add_argument("--p-covariate", type=float, help="also draw a binary covariate w")
    sim.add_argument("--K", type=int, default=50, help="bins of the u grid in the sidecar")
    sim.add_argument("--out", "-o", required=True, help="CSV path; the sidecar is written next to it as .json")

    fit = sub.add_parser("fit", help="fit the mediator model, bin, and write rate curves")
    _data_flags(fit)

    dec = sub.add_parser("decompose", help="effects and components from a fit directory")
    dec.add_argument("--fit", required=True, help="directory written by `qmed fit`")
    dec.add_argument("--out", "-o", help="output directory (default: the fit directory)")

    boot = sub.add_parser("bootstrap", help="effects with bag-of-little-bootstraps bands")
    _data_flags(boot)
    _blb_flags(boot)
    return parser


def _resolve(a) -> RunConfig:
    cfg = load_config(a.config) if getattr(a, "config", None) else RunConfig()
    cfg = apply_flags(cfg, a)
    if not cfg.input:
        raise SchemaError("no input file given (use --input or the config file)")
    return cfg


def _manifest(command: str, cfg_dict: dict, data_path, outputs, directory, extra=None):
    d = Path(directory)
    doc = {"command": command, "version": __version__, "config": cfg_dict,
           "outputs": {name: sha256_file(d / name) for name in sorted(outputs)}}
    if data_path is not None:
        doc["data_sha256"] = sha256_file(data_path)
    if extra:
        doc.update(extra)
    write_json(doc, d / ("manifest.json" if command != "decompose" else "decompose_manifest.json"))


def _effects_doc(curve: EffectCurve, overall: dict) -> dict:
    doc = curve.to_dict(overall)
    validate_effects(doc)
    return doc


def _component_rows(curve: EffectCurve):
    cols = ["u", *CURVE_FIELDS]
    if curve.ci:
        cols += [f"{f}_{b}" for f in CURVE_FIELDS for b in ("low", "high", "se") if f in curve.ci]
    rows = []
    for k, u in enumerate(curve.u_grid):
        row = {"u": float(u)}
        for f in CURVE_FIELDS:
            s = curve.rate_scale if f in SCALED_FIELDS else 1.0
            row[f] = float(getattr(curve, f)[k]) * s
            if f in curve.ci:
                for b in ("low", "high", "se"):
                    row[f"{f}_{b}"] = float(curve.ci[f][b][k]) * s
        rows.append(row)
    return cols, rows


def cmd_simulate(a) -> int:
    model = OracleModel((a.alpha0, a.alpha1, a.alpha2, a.alpha3), (a.beta0, a.beta1, a.beta2), a.sigma_exponent)
    table = simulate(model, a.n, a.p_exposed, a.seed, a.outcome_type, a.p_covariate)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(table, out)
    u = bin_edges(a.K)[1]
    cf1 = closed_forms(model, u, x=1, x_star=0.0)
    cf11 = closed_forms(model, u, x=1, x_star=1.0)
    try:
        xt = [float(v) for v in np.atleast_1d(tilde_x_star(model, u))]
    except ValueError:
        xt = None

    def listed(v):
        return [float(t) for t in np.atleast_1d(v)]

    sidecar = {"model": model.to_dict(), "n": a.n, "p_exposed": a.p_exposed, "seed": a.seed,
               "outcome_type": a.outcome_type, "p_covariate": a.p_covariate,
               "expected_event_rate": expected_event_rate(model, a.p_exposed),
               "closed_forms": {"u": listed(u), "nie_u": listed(cf1["nie_u"]), "nde_u": listed(cf1["nde_u"]),
                                "ace_u": listed(cf1["ace_u"]), "q": listed(cf1["q"]),
                                "s_x0": listed(cf1["s"]), "s_x1": listed(cf11["s"]),
                                "r_x1_xs0": listed(cf1["r"]), "r_x1_xs1": listed(cf11["r"]),
                                "tilde_x_star": xt}}
    write_json(sidecar, out.with_suffix(".json"))
    print(f"wrote {out} ({table.n} rows) and {out.with_suffix('.json')}")
    return 0


def _load(cfg: RunConfig) -> MicrodataTable:
    table = ingest_csv(cfg.input, cfg.schema)
    if table.rejected:
        print(f"dropped {table.rejected} row(s) with missing fields", file=sys.stderr)
    return table


def cmd_fit(a) -> int:
    cfg = _resolve(a)
    table = _load(cfg)
    fit = fit_pipeline(table, cfg.estimation)
    out = Path(cfg.out)
    written = write_fit(fit, out)
    _manifest("fit", cfg.to_dict(with_out=False), cfg.input, written, out,
              {"n_rows": table.n, "rejected_rows": table.rejected})
    print(f"fit written to {out}")
    return 0


def cmd_decompose(a) -> int:
    fit_dir = Path(a.fit)
    mpath = fit_dir / "manifest.json"
    if not mpath.exists():
        raise EstimationError(f"fit artifact is incomplete: {mpath} is missing")
    manifest = json.loads(mpath.read_text())
    cfg = RunConfig.from_dict(manifest["config"])
    fit = read_fit(fit_dir, cfg.estimation)
    curve, overall, _ = effects_from_fit(fit)
    out = Path(a.out) if a.out else fit_dir
    out.mkdir(parents=True, exist_ok=True)
    write_json(_effects_doc(curve, overall), out / "effects.json")
    cols, rows = _component_rows(curve)
    write_rows(out / "components.csv", cols, rows)
    _manifest("decompose", manifest["config"], None, ["effects.json", "components.csv"], out,
              {"fit_manifest_sha256": sha256_file(mpath)})
    print(f"effects written to {out}")
    return 0


def attach_band(curve: EffectCurve, overall: dict, band: ConfidenceBand):
    """Split a band over the flattened statistic back into per-field bands."""
    K = curve.u_grid.size
    ci = {}
    for i, f in enumerate(CURVE_FIELDS):
        sl = slice(i * K, (i + 1) * K)
        ci[f] = {"low": band.low[sl], "high": band.high[sl], "se": band.se[sl]}
    base = len(CURVE_FIELDS) * K
    overall_ci = {f: {"low": float(band.low[base + j]), "high": float(band.high[base + j]),
                      "se": float(band.se[base + j])} for j, f in enumerate(OVERALL)}
    return replace(curve, ci=ci), overall_ci


def cmd_bootstrap(a) -> int:
    cfg = _resolve(a)
    table = _load(cfg)
    curve, overall, _ = effects_from_fit(fit_pipeline(table, cfg.estimation))
    point = np.concatenate([curve.values(), [overall[f] for f in OVERALL]])
    band = blb_estimate(table, effect_statistic(cfg.estimation), cfg.blb, point=point)
    curve, overall_ci = attach_band(curve, overall, band)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = curve.to_dict(overall)
    scale = curve.rate_scale
    doc["overall_ci"] = {f: {k: (v * scale if np.isfinite(v) else None) for k, v in d.items()}
                         for f, d in overall_ci.items()}
    doc["inference"] = {k: v for k, v in band.method.items() if k != "replicate_values"}
    validate_effects(doc)
    write_json(doc, out / "effects.json")
    cols, rows = _component_rows(curve)
    write_rows(out / "components.csv", cols, rows)
    _manifest("bootstrap", cfg.to_dict(with_out=False), cfg.input, ["effects.json", "components.csv"], out,
              {"n_rows": table.n, "rejected_rows": table.rejected})
    print(f"bootstrap bands written to {out} ({band.method['dropped']} replicate(s) dropped)")
    return 0


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "decompose": cmd_decompose, "bootstrap": cmd_bootstrap}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except QmedError as exc:
        print(f"qmed: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"qmed: invalid argument: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
