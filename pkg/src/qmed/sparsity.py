"""Sparsity (quantile density) estimation by difference quotients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .data import MicrodataTable
from .errors import EstimationError
from .quantreg import DesignSpec, QuantilePath, design_matrix, table_path, weighted_quantile


def bofinger_bandwidth(n, u, truncate: bool = True):
    """Bofinger bandwidth n^(-1/5) [4.5 phi(v)^4 / (2 v^2 + 1)^2]^(1/5), v = Phi^-1(u).

    With ``truncate`` the result is capped at ``min(u, 1-u) / 2`` so that
    ``u +/- eps`` stays inside (0, 1).
    """
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0) or np.any(u >= 1):
        raise ValueError("u must lie in (0, 1)")
    if np.any(np.asarray(n) < 2):
        raise ValueError("bandwidth needs n >= 2")
    v = norm.ppf(u)
    eps = np.asarray(n, dtype=np.float64) ** -0.2 * (4.5 * norm.pdf(v) ** 4 / (2 * v * v + 1) ** 2) ** 0.2
    if truncate:
        eps = np.minimum(eps, np.minimum(u, 1 - u) / 2)
    return float(eps) if eps.ndim == 0 else eps


@dataclass(frozen=True)
class SparsityEstimate:
    """Per-arm sparsity on a u grid for one covariate profile.

    ``s_values``, ``epsilon`` and ``floored`` have shape ``(2, K)``, row x*
    holding the arm x*. ``floored`` marks points that came out nonpositive
    and were replaced by the smallest positive value of that arm.
    """

    u_grid: np.ndarray
    s_values: np.ndarray
    epsilon: np.ndarray
    weights: tuple
    floored: np.ndarray

    def inverse_tilde(self, mode: str = "average_s") -> np.ndarray:
        return density_factor_tilde(self.s_values[0], self.s_values[1], *self.weights, mode=mode)

    def to_rows(self, label: str = "all"):
        for xs in (0, 1):
            for k, u in enumerate(self.u_grid):
                yield {"profile": label, "u": u, "x_star": xs, "s": self.s_values[xs, k],
                       "epsilon": self.epsilon[xs, k], "floored": bool(self.floored[xs, k])}


def difference_quotient(q_plus, q_minus, eps):
    return (np.asarray(q_plus) - np.asarray(q_minus)) / (2.0 * np.asarray(eps))


def _floor(s: np.ndarray, arm: int):
    bad = ~(s > 0)
    if bad.all():
        raise EstimationError(f"sparsity undefined for arm x*={arm}: the mediator quantile function is flat")
    if bad.any():
        s = np.where(bad, s[~bad].min(), s)
    return s, bad


def _quantiles_at(table: MicrodataTable, design: DesignSpec, levels: np.ndarray, x_star: int, w,
                  path: QuantilePath = None) -> np.ndarray:
    if design.is_binary_only:
        arm = table.x == x_star
        return weighted_quantile(table.m[arm], levels, table.row_weights[arm])
    z = design_matrix(design, [x_star], None if not len(w) else [w], table.covariate_names)[0]
    return (path or table_path(table, design)).coef(levels) @ z


def sparsity_at(table: MicrodataTable, u, x_star: int, w: Sequence[float] = (), design: DesignSpec = DesignSpec(),
                eps=None, path: QuantilePath = None):
    """Raw difference-quotient sparsity at level(s) ``u`` for arm ``x_star``.

    The quantile function is refitted at ``u - eps`` and ``u + eps``; by
    default ``eps`` is the truncated Bofinger bandwidth with the arm's total
    weight as sample size. No positivity adjustment is applied here.
    ``path`` shares refits between arms and covariate profiles.
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if eps is None:
        n_arm = table.row_weights[table.x == x_star].sum()
        eps = bofinger_bandwidth(max(n_arm, 2.0), u)
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), u.shape)
    levels = np.concatenate([u - eps, u + eps])
    q = _quantiles_at(table, design, levels, x_star, w, path)
    return difference_quotient(q[u.size:], q[:u.size], eps)


def refit_levels(table: MicrodataTable, u_grid) -> np.ndarray:
    """Every level ``u +/- eps`` that ``estimate_sparsity`` refits at, both arms."""
    u_grid = np.atleast_1d(np.asarray(u_grid, dtype=np.float64))
    wt = table.row_weights
    out = []
    for xs in (0, 1):
        n_arm = wt[table.x == xs].sum()
        if n_arm > 0:
            eps = bofinger_bandwidth(max(n_arm, 2.0), u_grid)
            out += [u_grid - eps, u_grid + eps]
    return np.concatenate(out) if out else np.empty(0)


def estimate_sparsity(table: MicrodataTable, u_grid, w: Sequence[float] = (),
                      design: DesignSpec = DesignSpec(), path: QuantilePath = None) -> SparsityEstimate:
    """Sparsity for both arms with the positivity floor applied."""
    u_grid = np.atleast_1d(np.asarray(u_grid, dtype=np.float64))
    s = np.empty((2, u_grid.size))
    eps = np.empty_like(s)
    floored = np.zeros_like(s, dtype=bool)
    wt = table.row_weights
    n_arm = np.array([wt[table.x == 0].sum(), wt[table.x == 1].sum()])
    for xs in (0, 1):
        if n_arm[xs] <= 0:
            raise EstimationError(f"arm x*={xs} is empty")
        eps[xs] = bofinger_bandwidth(max(n_arm[xs], 2.0), u_grid)
    if path is None and not design.is_binary_only:
        path = table_path(table, design)
    for xs in (0, 1):
        s[xs], floored[xs] = _floor(sparsity_at(table, u_grid, xs, w, design, eps[xs], path), xs)
    total = n_arm.sum()
    return SparsityEstimate(u_grid, s, eps, (float(n_arm[0] / total), float(n_arm[1] / total)), floored)


def density_factor_tilde(s0, s1, n0, n1, mode: str = "average_s"):
    """Density factor at the averaged exposure level.

    ``mode="average_s"`` averages s with weights n0/n, n1/n and inverts;
    ``mode="average_inverse"`` averages 1/s instead.
    """
    s0 = np.asarray(s0, dtype=np.float64)
    s1 = np.asarray(s1, dtype=np.float64)
    if np.any(~(s0 > 0)) or np.any(~(s1 > 0)):
        raise ValueError("sparsity values must be positive")
    if n0 < 0 or n1 < 0 or n0 + n1 <= 0:
        raise ValueError("arm sizes must be nonnegative and not both zero")
    p0, p1 = n0 / (n0 + n1), n1 / (n0 + n1)
    if mode == "average_s":
        out = 1.0 / (p0 * s0 + p1 * s1)
    elif mode == "average_inverse":
        out = p0 / s0 + p1 / s1
    else:
        raise ValueError(f"unknown density averaging mode {mode!r}")
    return float(out) if out.ndim == 0 else out
