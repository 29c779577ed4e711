"""End-to-end estimation: mediator fit, binning, rates, sparsity and effects."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .data import MicrodataTable, covariate_profiles, profile_mask, split_by_exposure
from .effects import (EffectCurve, average_over_u, integrate_over_profiles, u_specific_effects,
                      with_components)
from .mediator import MediatorModel, quantile_effect
from .outcome import QuantileBinning, RateCurve, assign_bins, bin_edges, rate_curve, sensitivity_curve, sensitivity_tilde
from .quantreg import DesignSpec, QuantileFit, fit_quantile_grid, table_path
from .sparsity import SparsityEstimate, estimate_sparsity, refit_levels


@dataclass(frozen=True)
class EstimationConfig:
    """Knobs of a single estimation run.

    ``effect_grid`` defaults to the bin midpoints. ``density_mode`` chooses
    whether s (``"average_s"``) or 1/s (``"average_inverse"``) is averaged
    across the two arms.
    """

    K: int = 50
    covariates: tuple = ()
    interactions: tuple = ()
    effect_grid: Optional[tuple] = None
    x_for_nie: int = 1
    rate_scale: float = 1.0
    interpolation: str = "linear"
    binning_mode: str = "residual"
    rearrange: bool = False
    density_mode: str = "average_s"
    max_profiles: int = 64
    max_undefined: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "interactions", tuple(self.interactions))
        if self.effect_grid is not None:
            object.__setattr__(self, "effect_grid", tuple(float(u) for u in self.effect_grid))
        if self.x_for_nie not in (0, 1):
            raise ValueError("x_for_nie must be 0 or 1")

    @property
    def design(self) -> DesignSpec:
        return DesignSpec(self.covariates, self.interactions)

    @property
    def u_grid(self) -> np.ndarray:
        return bin_edges(self.K)[1] if self.effect_grid is None else np.asarray(self.effect_grid)

    def to_dict(self):
        d = asdict(self)
        d["covariates"], d["interactions"] = list(self.covariates), list(self.interactions)
        d["effect_grid"] = None if self.effect_grid is None else list(self.effect_grid)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class FitResult:
    """Everything the decomposition needs; the raw table is not required."""

    config: EstimationConfig
    quantile_fit: QuantileFit
    profiles: list
    rates: dict                       # (profile label, x_star) -> RateCurve
    sparsity: dict                    # profile label -> SparsityEstimate
    q: dict                           # profile label -> q(u) on the effect grid
    binning: Optional[QuantileBinning] = None
    arm_totals: tuple = (0.0, 0.0)
    summary: dict = field(default_factory=dict)


def project_covariates(table: MicrodataTable, names) -> MicrodataTable:
    """Keep only the covariate columns used by the design."""
    names = tuple(names)
    if names == table.covariate_names:
        return table
    missing = [c for c in names if c not in table.covariate_names]
    if missing:
        raise ValueError(f"covariates {missing} are not in the table")
    idx = [table.covariate_names.index(c) for c in names]
    return MicrodataTable(table.y, table.x, table.m, table.w[:, idx], names, table.weights)


def fit_pipeline(table: MicrodataTable, config: EstimationConfig = EstimationConfig()) -> FitResult:
    table = project_covariates(table, config.covariates)
    split_by_exposure(table)
    wt = table.row_weights
    arm_totals = (float(wt[table.x == 0].sum()), float(wt[table.x == 1].sum()))
    edges, mids = bin_edges(config.K)
    u_grid = config.u_grid
    fit_grid = np.union1d(mids, u_grid)
    path = None
    if not config.design.is_binary_only:
        # one increasing sweep over every level the fit and the sparsity refits need
        path = table_path(table, config.design)
        path.coef(np.concatenate([fit_grid, refit_levels(table, u_grid)]))
    qfit = fit_quantile_grid(table, fit_grid, config.design, rearranged=config.rearrange, path=path)
    if config.covariates:
        profiles = covariate_profiles(table, config.max_profiles)
    else:
        profiles = covariate_profiles(table)
    model = MediatorModel(qfit, profiles, table.covariate_names, config.rearrange)
    binning = None
    for xs in (0, 1):
        binning = assign_bins(table, model, config.K, xs, config.binning_mode, binning)
    rates, sparsity, q = {}, {}, {}
    for prof in profiles:
        mask = None if not config.covariates else profile_mask(table, prof)
        for xs in (0, 1):
            rates[prof.label, xs] = rate_curve(binning, table, xs, config.rate_scale, config.interpolation, mask)
        sparsity[prof.label] = estimate_sparsity(table, u_grid, prof.w, config.design, path)
        q[prof.label] = np.asarray(quantile_effect(model, u_grid, prof.w), dtype=np.float64)
    summary = {"n": table.n, "total_weight": table.total_weight, "arm_totals": list(arm_totals),
               "profiles": [{"label": p.label, "weight": p.weight} for p in profiles],
               "bin_counts": {xs: binning.counts(table, xs).tolist() for xs in (0, 1)}}
    return FitResult(config, qfit, profiles, rates, sparsity, q, binning, arm_totals, summary)


def profile_effects(fit: FitResult, label: str) -> EffectCurve:
    cfg = fit.config
    u = cfg.u_grid
    curves = {xs: fit.rates[label, xs] for xs in (0, 1)}
    eff = u_specific_effects(curves, u, cfg.x_for_nie, label)
    x = cfg.x_for_nie
    r0 = sensitivity_curve(curves[0], x, u)
    r1 = sensitivity_curve(curves[1], x, u)
    sp: SparsityEstimate = fit.sparsity[label]
    n0, n1 = sp.weights
    r_tilde, fallback = sensitivity_tilde(r0, r1, n0, n1)
    inv_s = sp.inverse_tilde(cfg.density_mode)
    flags = {"r_fallback": fallback, "s_floored": sp.floored.any(axis=0)}
    return with_components(eff, fit.q[label], inv_s, r_tilde, flags)


def effects_from_fit(fit: FitResult):
    """Marginal effect curve, its overall averages, and the per-profile curves."""
    per_profile = [profile_effects(fit, p.label) for p in fit.profiles]
    marginal = integrate_over_profiles(per_profile, [p.weight for p in fit.profiles])
    if len(per_profile) == 1:
        marginal = replace(marginal, flags=per_profile[0].flags)
    overall = average_over_u(marginal, fit.config.max_undefined)
    return marginal, overall, per_profile


def estimate_effects(table: MicrodataTable, config: EstimationConfig = EstimationConfig()):
    """Fit and decompose in one call; returns ``(EffectCurve, overall dict)``."""
    marginal, overall, _ = effects_from_fit(fit_pipeline(table, config))
    return marginal, overall


def effect_statistic(config: EstimationConfig = EstimationConfig()):
    """Statistic for resampling: every curve field followed by the three overall means."""
    def statistic(table: MicrodataTable) -> np.ndarray:
        curve, overall = estimate_effects(table, config)
        return np.concatenate([curve.values(), [overall["nie"], overall["nde"], overall["ace"]]])
    return statistic
