"""u-specific total, direct and indirect effects and the indirect-effect decomposition."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import AggregationError
from .outcome import RateCurve

CURVE_FIELDS = ("nie", "nde", "ace", "q", "inv_s", "r", "product")
# fields measured on the outcome scale, multiplied by rate_scale on output
SCALED_FIELDS = ("nie", "nde", "ace", "r", "product")


@dataclass(frozen=True)
class EffectCurve:
    """Effects and decomposition components on a u grid.

    All values are on the unscaled outcome scale; ``rate_scale`` is applied
    only when serializing. ``nde`` always equals ``ace - nie``, so the direct
    effect is reported at ``x_star_for_nde = 1 - x_for_nie``.
    """

    u_grid: np.ndarray
    nie: np.ndarray
    nde: np.ndarray
    ace: np.ndarray
    q: np.ndarray = None
    inv_s: np.ndarray = None
    r: np.ndarray = None
    product: np.ndarray = None
    x_for_nie: int = 1
    profile: str = "marginal"
    rate_scale: float = 1.0
    flags: dict = field(default_factory=dict)
    ci: dict = field(default_factory=dict)

    def __post_init__(self):
        K = np.asarray(self.u_grid).size
        for name in ("u_grid", *CURVE_FIELDS):
            v = getattr(self, name)
            v = np.full(K, np.nan) if v is None else np.asarray(v, dtype=np.float64).ravel()
            if v.size != K:
                raise ValueError(f"{name} has {v.size} points, grid has {K}")
            object.__setattr__(self, name, v)

    @property
    def x_star_for_nde(self) -> int:
        return 1 - self.x_for_nie

    def values(self) -> np.ndarray:
        """All curve fields stacked into one vector (for resampling)."""
        return np.concatenate([getattr(self, f) for f in CURVE_FIELDS])

    def to_dict(self, overall: dict = None) -> dict:
        def listed(v, scale=1.0):
            return [None if not np.isfinite(a) else float(a) * scale for a in v]

        out = {"u": listed(self.u_grid), "x_for_nie": self.x_for_nie, "x_star_for_nde": self.x_star_for_nde,
               "profile": self.profile, "rate_scale": self.rate_scale}
        for f in CURVE_FIELDS:
            out[f] = listed(getattr(self, f), self.rate_scale if f in SCALED_FIELDS else 1.0)
        if overall is not None:
            out["overall"] = {k: (None if not math.isfinite(v) else v * self.rate_scale) for k, v in overall.items()}
        if self.flags:
            out["flags"] = {k: [bool(b) for b in v] for k, v in self.flags.items()}
        if self.ci:
            out["ci"] = {}
            for f, band in self.ci.items():
                s = self.rate_scale if f in SCALED_FIELDS else 1.0
                out["ci"][f] = {"low": listed(band["low"], s), "high": listed(band["high"], s),
                                "se": listed(band["se"], s)}
        return out


def u_specific_effects(curves: dict, u_grid, x_for_nie: int = 1, profile: str = "marginal") -> EffectCurve:
    """Plug-in effects from rate curves keyed by ranking exposure x*.

    ``curves[x_star]`` holds the rates of both arms ranked under x*, so
    R(x, x*, u) is ``curves[x_star].rate_at(x, u)``.
    """
    if set(curves) != {0, 1}:
        raise ValueError("need rate curves ranked under x*=0 and x*=1")
    if not np.array_equal(curves[0].midpoints, curves[1].midpoints):
        raise ValueError("rate curves use different binnings")
    u = np.asarray(u_grid, dtype=np.float64)
    R = {(x, xs): np.asarray(curves[xs].rate_at(x, u)) for x in (0, 1) for xs in (0, 1)}
    nie = R[x_for_nie, 1] - R[x_for_nie, 0]
    ace = R[1, 1] - R[0, 0]
    return EffectCurve(u, nie, ace - nie, ace, x_for_nie=x_for_nie, profile=profile,
                       rate_scale=curves[0].rate_scale)


def decompose_nie(q, inv_s, r):
    """Chain-rule product r * (1/s) * q; undefined inputs give undefined points."""
    return np.asarray(r, dtype=np.float64) * np.asarray(inv_s, dtype=np.float64) * np.asarray(q, dtype=np.float64)


def with_components(curve: EffectCurve, q, inv_s, r, flags: dict = None) -> EffectCurve:
    product = decompose_nie(q, inv_s, r)
    return replace(curve, q=q, inv_s=inv_s, r=r, product=product, flags={**curve.flags, **(flags or {})})


def cell_weights(u_grid) -> np.ndarray:
    """Midpoint-rule weights: each point owns the cell halfway to its neighbours, ends at 0 and 1."""
    u = np.asarray(u_grid, dtype=np.float64)
    bounds = np.concatenate([[0.0], (u[1:] + u[:-1]) / 2, [1.0]])
    return np.diff(bounds)


def average_over_u(curve: EffectCurve, max_undefined: float = 0.1) -> dict:
    """Overall NIE, NDE and ACE as midpoint-rule means over u.

    Points where nie or nde is undefined are left out and the remaining
    weights renormalized; more than ``max_undefined`` missing weight raises.
    ACE is reported as NIE + NDE.
    """
    if curve.u_grid.size < 2:
        raise ValueError("need at least two grid points to average")
    w = cell_weights(curve.u_grid)
    ok = np.isfinite(curve.nie) & np.isfinite(curve.nde)
    missing = w[~ok].sum() / w.sum()
    if missing > max_undefined:
        raise AggregationError(f"{missing:.1%} of the u range is undefined (limit {max_undefined:.0%})")
    w = np.where(ok, w, 0.0)
    nie = float(np.dot(w, np.where(ok, curve.nie, 0.0)) / w.sum())
    nde = float(np.dot(w, np.where(ok, curve.nde, 0.0)) / w.sum())
    return {"nie": nie, "nde": nde, "ace": nie + nde}


def integrate_over_profiles(curves: Sequence[EffectCurve], weights: Sequence[float]) -> EffectCurve:
    """Profile-weighted average of every curve field."""
    curves = list(curves)
    weights = np.asarray(weights, dtype=np.float64)
    if len(curves) == 0 or weights.size != len(curves):
        raise ValueError("one weight per profile curve is required")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("profile weights must be nonnegative and sum to 1")
    base = curves[0]
    for c in curves[1:]:
        if not np.array_equal(c.u_grid, base.u_grid) or c.x_for_nie != base.x_for_nie:
            raise ValueError("profile curves differ in grid or convention")
    if len(curves) == 1:
        return replace(base, profile="marginal")
    avg = {f: sum(wt * getattr(c, f) for wt, c in zip(weights, curves)) for f in CURVE_FIELDS}
    avg["nde"] = avg["ace"] - avg["nie"]
    return EffectCurve(base.u_grid, x_for_nie=base.x_for_nie, profile="marginal", rate_scale=base.rate_scale, **avg)
