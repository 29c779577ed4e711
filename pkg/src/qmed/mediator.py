"""Conditional quantile function of the mediator, its inverse and the quantile effect."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import CovariateProfile
from .errors import ExtrapolationError
from .quantreg import QuantileFit, design_matrix

_GRID_TOL = 1e-12


@dataclass(frozen=True)
class MediatorModel:
    """A quantile fit plus the covariate profiles it is evaluated at.

    Covariate vectors ``w`` are given in the order of ``covariate_names``
    (the table's covariate columns); the design picks the columns it uses.
    With ``rearrange=True`` every predicted curve is sorted along u before use.
    """

    fit: QuantileFit
    profiles: tuple = (CovariateProfile(w=()),)
    covariate_names: tuple = ()
    rearrange: bool = False

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        p = len(self.covariate_names)
        for prof in self.profiles:
            if len(prof.w) != p:
                raise ValueError(f"profile {prof.label!r} has {len(prof.w)} covariates, expected {p}")

    @property
    def u_grid(self) -> np.ndarray:
        return self.fit.u_grid

    def design_rows(self, x, w=None) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        p = len(self.covariate_names)
        if w is None or p == 0:
            return design_matrix(self.fit.design, x)
        w = np.asarray(w, dtype=np.float64).reshape(-1, p)
        if w.shape[0] == 1 and x.size > 1:
            w = np.repeat(w, x.size, axis=0)
        if x.size == 1 and w.shape[0] > 1:
            x = np.repeat(x, w.shape[0])
        return design_matrix(self.fit.design, x, w, self.covariate_names)

    def curve(self, x: int, w: Sequence[float] = ()) -> np.ndarray:
        """Predicted quantiles at every grid level for one (x, w)."""
        q = self.design_rows([x], [w] if len(w) else None)[0] @ self.fit.coef.T
        return np.sort(q) if self.rearrange else q

    def coef_at(self, u) -> np.ndarray:
        """Coefficient rows linearly interpolated to levels ``u``."""
        u = self._in_range(u)
        g = self.fit.u_grid
        return np.column_stack([np.interp(u, g, self.fit.coef[:, j]) for j in range(self.fit.coef.shape[1])])

    def _in_range(self, u):
        u = np.asarray(u, dtype=np.float64)
        g = self.fit.u_grid
        if np.any(u < g[0] - _GRID_TOL) or np.any(u > g[-1] + _GRID_TOL):
            raise ExtrapolationError(f"u outside the fitted range [{g[0]}, {g[-1]}]")
        return np.clip(u, g[0], g[-1])


def conditional_quantile(model: MediatorModel, u, x: int, w: Sequence[float] = ()):
    """Linearly interpolated conditional u-quantile of the mediator."""
    u = model._in_range(u)
    out = np.interp(u, model.u_grid, model.curve(x, w))
    return float(out) if out.ndim == 0 else out


def rank_transform(model: MediatorModel, m, x: int, w: Sequence[float] = ()):
    """Generalized inverse of the conditional quantile curve.

    Returns ``(u, out_of_range)``. Inside the fitted range ``u`` is the
    largest grid level whose quantile does not exceed ``m``, interpolated
    linearly toward the next level. Values outside are clamped to the grid
    ends and flagged.
    """
    q = model.curve(x, w)
    if np.any(np.diff(q) < 0):
        raise ValueError("quantile curve is not monotone; enable rearrangement")
    g = model.u_grid
    m = np.asarray(m, dtype=np.float64)
    flat = np.atleast_1d(m)
    k = np.searchsorted(q, flat, side="right") - 1
    low, high = k < 0, flat > q[-1]
    kk = np.clip(k, 0, g.size - 2)
    q0, q1 = q[kk], q[kk + 1]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(q1 > q0, (flat - q0) / (q1 - q0), 0.0)
    u = g[kk] + np.clip(frac, 0.0, 1.0) * (g[kk + 1] - g[kk])
    u = np.where(k >= g.size - 1, g[-1], u)
    u = np.where(low, g[0], np.where(high, g[-1], u))
    flags = low | high
    if m.ndim == 0:
        return float(u[0]), bool(flags[0])
    return u, flags


def quantile_effect(model: MediatorModel, u, w: Sequence[float] = ()):
    """Exposure shift of the conditional u-quantile, Q(u | x=1, w) - Q(u | x=0, w)."""
    return np.asarray(conditional_quantile(model, u, 1, w)) - conditional_quantile(model, u, 0, w)
