"""Quantile binning of observations, per-bin outcome rates and the sensitivity r."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import MicrodataTable
from .errors import DegenerateArmError
from .kernels import assign_nearest, bin_totals
from .mediator import MediatorModel, rank_transform
from .sparsity import bofinger_bandwidth


def bin_edges(K: int):
    """Equal-width edges ``0 = u_0 < ... < u_K = 1`` and midpoints."""
    if K < 2:
        raise ValueError("need at least two bins")
    edges = np.linspace(0.0, 1.0, K + 1)
    mids = (np.arange(1, K + 1) - 0.5) / K
    return edges, mids


@dataclass(frozen=True)
class QuantileBinning:
    """Bin of every row under each ranking exposure.

    ``assignment[x_star]`` holds 0-based bin indices; index ``k`` is the
    interval ``(u_k, u_{k+1}]``, with the first interval closed on the left.
    """

    K: int
    edges: np.ndarray
    midpoints: np.ndarray
    assignment: dict = field(default_factory=dict)
    mode: str = "residual"

    def counts(self, table: MicrodataTable, x_star: int) -> np.ndarray:
        at_risk, _ = bin_totals(self.assignment[x_star], table.x, table.y, table.row_weights, self.K)
        return at_risk


def _cdf_bins(table: MicrodataTable, model: MediatorModel, K: int, x_star: int) -> np.ndarray:
    if len(model.covariate_names) == 0:
        arm = table.x == x_star
        wa = table.row_weights[arm]
        order = np.argsort(table.m[arm], kind="stable")
        sm, cw = table.m[arm][order], np.cumsum(wa[order])
        total = cw[-1]
        pos = np.searchsorted(sm, table.m, side="right")
        c = np.where(pos > 0, cw[np.maximum(pos - 1, 0)], 0.0)
        scaled = c * K / total
    else:
        scaled = np.empty(table.n)
        rows = np.unique(table.w, axis=0)
        for w in rows:
            sel = np.all(table.w == w, axis=1)
            u, _ = rank_transform(model, table.m[sel], x_star, tuple(w))
            scaled[sel] = u * K
    return np.clip(np.ceil(scaled - 1e-9).astype(np.int64) - 1, 0, K - 1)


def assign_bins(table: MicrodataTable, model: MediatorModel, K: int, x_star: int,
                mode: str = "residual", binning: QuantileBinning = None) -> QuantileBinning:
    """Assign every row to a quantile bin of the ``x_star`` mediator distribution.

    ``mode="residual"`` picks, per row, the bin midpoint whose fitted
    conditional quantile (at exposure ``x_star`` and the row's covariates) is
    closest to the observed mediator, ties to the lower bin. ``mode="cdf"``
    classifies the row's rank under the ``x_star`` distribution directly.
    Passing an existing ``binning`` adds the assignment to it.
    """
    edges, mids = bin_edges(K)
    arm = table.x == x_star
    if np.unique(table.m[arm]).size < K:
        warnings.warn(f"arm x*={x_star} has fewer distinct mediator values than K={K}; some bins may be empty",
                      RuntimeWarning, stacklevel=2)
    if mode == "residual":
        if table.p:
            wcells, cell_of = np.unique(table.w, axis=0, return_inverse=True)
            cells = model.design_rows(np.full(wcells.shape[0], x_star), wcells)
        else:
            cells, cell_of = model.design_rows([x_star]), np.zeros(table.n, dtype=np.int64)
        idx = assign_nearest(table.m, cells, model.coef_at(mids), model.rearrange, cell_of.ravel())
    elif mode == "cdf":
        idx = _cdf_bins(table, model, K, x_star)
    else:
        raise ValueError(f"unknown binning mode {mode!r}")
    assignment = dict(binning.assignment) if binning is not None else {}
    assignment[x_star] = idx
    return QuantileBinning(K, edges, mids, assignment, mode)


@dataclass(frozen=True)
class RateCurve:
    """Per-bin events and at-risk totals for both exposure arms under one ranking x*.

    Row ``x`` of ``at_risk``/``events`` is arm ``x``. Rates of empty bins are
    NaN and their knots are skipped by the interpolant.
    """

    midpoints: np.ndarray
    x_star: int
    at_risk: np.ndarray
    events: np.ndarray
    rate_scale: float = 1.0
    interpolation: str = "linear"

    @property
    def K(self) -> int:
        return self.midpoints.size

    @property
    def rates(self) -> np.ndarray:
        """Unscaled rates, shape (2, K)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.at_risk > 0, self.events / np.where(self.at_risk > 0, self.at_risk, 1.0), np.nan)

    def arm_total(self, x: int) -> float:
        return float(self.at_risk[x].sum())

    def rate_at(self, x: int, u):
        """Interpolated unscaled rate of arm ``x`` at level(s) ``u``."""
        u = np.asarray(u, dtype=np.float64)
        rates = self.rates[x]
        ok = ~np.isnan(rates)
        knots, vals = self.midpoints[ok], rates[ok]
        if knots.size == 0:
            return np.full(u.shape, np.nan) if u.ndim else np.nan
        inside = (u >= knots[0] - 1e-12) & (u <= knots[-1] + 1e-12)
        if self.interpolation == "linear" or knots.size < 3:
            out = np.interp(u, knots, vals)
        elif self.interpolation == "spline":
            from scipy.interpolate import CubicSpline

            out = CubicSpline(knots, vals)(u)
        else:
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        out = np.where(inside, out, np.nan)
        return float(out) if out.ndim == 0 else out

    def to_rows(self):
        rates = self.rates
        for x in (0, 1):
            for k in range(self.K):
                r = rates[x, k]
                yield {"u_mid": self.midpoints[k], "x": x, "x_star": self.x_star,
                       "n_at_risk": self.at_risk[x, k], "events": self.events[x, k],
                       "rate": r * self.rate_scale if np.isfinite(r) else float("nan")}


def rate_curve(binning: QuantileBinning, table: MicrodataTable, x_star: int, rate_scale: float = 1.0,
               interpolation: str = "linear", mask=None) -> RateCurve:
    """Per-bin rates for both arms under ranking ``x_star``.

    ``mask`` restricts the totals to a subset of rows (a covariate cell).
    """
    w = table.row_weights if mask is None else np.where(mask, table.row_weights, 0.0)
    at_risk, events = bin_totals(binning.assignment[x_star], table.x, table.y, w, binning.K)
    for x in (0, 1):
        if not at_risk[x].any():
            raise DegenerateArmError(f"every bin is empty for arm x={x} under ranking x*={x_star}")
    return RateCurve(binning.midpoints, x_star, at_risk, events, rate_scale, interpolation)


def default_delta(n_arm: float, u_tilde, midpoints) -> np.ndarray:
    """Bofinger step truncated to keep ``u_tilde +/- delta`` strictly inside the knot range."""
    u_tilde = np.asarray(u_tilde, dtype=np.float64)
    lo, hi = midpoints[0], midpoints[-1]
    room = np.minimum(u_tilde - lo, hi - u_tilde) / 2
    return np.minimum(bofinger_bandwidth(max(n_arm, 2.0), u_tilde), np.maximum(room, 0.0))


def sensitivity_r(curve: RateCurve, x: int, u_tilde: float, delta: float = None) -> float:
    """Central difference of the interpolated rate curve of arm ``x``."""
    if delta is None:
        delta = float(default_delta(curve.arm_total(x), u_tilde, curve.midpoints))
    lo, hi = curve.midpoints[0], curve.midpoints[-1]
    if not delta > 0 or not (lo < u_tilde - delta and u_tilde + delta < hi):
        raise ValueError(f"u={u_tilde} +/- {delta} must lie strictly inside ({lo}, {hi})")
    return (curve.rate_at(x, u_tilde + delta) - curve.rate_at(x, u_tilde - delta)) / (2.0 * delta)


def sensitivity_curve(curve: RateCurve, x: int, u_grid) -> np.ndarray:
    """``sensitivity_r`` over a grid, NaN where it is undefined."""
    u_grid = np.asarray(u_grid, dtype=np.float64)
    delta = default_delta(curve.arm_total(x), u_grid, curve.midpoints)
    out = np.full(u_grid.size, np.nan)
    ok = delta > 0
    if ok.any():
        out[ok] = (curve.rate_at(x, u_grid[ok] + delta[ok]) - curve.rate_at(x, u_grid[ok] - delta[ok])) / (2 * delta[ok])
    return out


def sensitivity_tilde(r0, r1, n0: float, n1: float):
    """Average of the two rankings' sensitivities with weights n0, n1.

    Returns ``(value, fallback)``; where one input is undefined the other is
    used and ``fallback`` is set.
    """
    r0 = np.asarray(r0, dtype=np.float64)
    r1 = np.asarray(r1, dtype=np.float64)
    p0 = n0 / (n0 + n1)
    avg = p0 * r0 + (1 - p0) * r1
    d0, d1 = np.isfinite(r0), np.isfinite(r1)
    out = np.where(d0 & d1, avg, np.where(d0, r0, np.where(d1, r1, np.nan)))
    flag = d0 ^ d1
    if out.ndim == 0:
        return float(out), bool(flag)
    return out, flag


def raw_risk_curve(table: MicrodataTable, m_edges):
    """Rates by exposure arm in bins of the raw mediator value.

    Returns ``(bin_mids, rates, at_risk)`` with rates and at_risk of shape
    ``(2, len(m_edges) - 1)``; rows outside the edges are ignored.
    """
    m_edges = np.asarray(m_edges, dtype=np.float64)
    nb = m_edges.size - 1
    idx = np.searchsorted(m_edges, table.m, side="right") - 1
    idx = np.where(table.m == m_edges[-1], nb - 1, idx)
    inside = (idx >= 0) & (idx < nb)
    w = np.where(inside, table.row_weights, 0.0)
    at_risk, events = bin_totals(np.clip(idx, 0, nb - 1), table.x, table.y, w, nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = np.where(at_risk > 0, events / np.where(at_risk > 0, at_risk, 1), np.nan)
    return (m_edges[:-1] + m_edges[1:]) / 2, rates, at_risk
