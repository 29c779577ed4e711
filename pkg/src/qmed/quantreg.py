"""Linear conditional quantile models fitted by check-loss minimization.

Two routes are used. Saturated designs (each distinct design row is its own
cell, e.g. intercept plus binary exposure) are solved exactly from weighted
cell quantiles. Everything else goes through a linear program solved with
HiGHS. A sequence of levels on one problem re-solves a single LP whose costs
change with u, so each solve starts from the previous optimal basis. Very
large problems are first reduced by globbing the rows whose residual sign is
already settled. Answers are snapped to an exact vertex.

Sample quantiles follow the left-continuous inverse of the empirical CDF
(type 1): the smallest order statistic whose cumulative weight reaches u*W.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import highspy
import numpy as np
import scipy.sparse as sp

from .data import MicrodataTable
from .errors import DegenerateArmError, EstimationError

# a cumulative weight that falls short of u*W by less than this share of W
# counts as reaching it, so k/n grid points land on the k-th order statistic
QUANTILE_GUARD = 1e-10
GLOB_THRESHOLD = 4000
# collapsed problems up to this size run the warm-started path without globbing
PATH_THRESHOLD = 50_000


@dataclass(frozen=True)
class DesignSpec:
    """Regressors of the mediator model.

    The design row is ``[1, x, w_1..w_p, x*w_j for j in interactions]``.
    ``covariates`` are column names of the table, ``interactions`` a subset of
    them that also enter multiplied by the exposure.
    """

    covariates: tuple = ()
    interactions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "interactions", tuple(self.interactions))
        unknown = set(self.interactions) - set(self.covariates)
        if unknown:
            raise ValueError(f"interaction terms {sorted(unknown)} are not covariates")

    @property
    def names(self) -> list:
        return ["(intercept)", "x", *self.covariates, *(f"x:{c}" for c in self.interactions)]

    @property
    def size(self) -> int:
        return 2 + len(self.covariates) + len(self.interactions)

    @property
    def is_binary_only(self) -> bool:
        return not self.covariates

    def to_dict(self):
        return {"covariates": list(self.covariates), "interactions": list(self.interactions)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d.get("covariates", ())), tuple(d.get("interactions", ())))


def design_matrix(design: DesignSpec, x, w=None, covariate_names: Sequence[str] = ()) -> np.ndarray:
    """Build design rows for exposure ``x`` and covariates ``w``.

    ``w`` has one column per entry of ``covariate_names``; only the columns
    named in the design are used.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    cols = [np.ones(n), x]
    if design.covariates:
        w = np.asarray(w, dtype=np.float64).reshape(n, -1)
        names = list(covariate_names)
        missing = [c for c in design.covariates if c not in names]
        if missing:
            raise ValueError(f"design covariates {missing} not in {names}")
        for c in design.covariates:
            cols.append(w[:, names.index(c)])
        for c in design.interactions:
            cols.append(x * w[:, names.index(c)])
    return np.column_stack(cols)


def table_design(table: MicrodataTable, design: DesignSpec) -> np.ndarray:
    return design_matrix(design, table.x, table.w, table.covariate_names)


@dataclass(frozen=True)
class QuantileFit:
    """Coefficients of the linear quantile model on a grid of levels."""

    u_grid: np.ndarray
    coef: np.ndarray
    design: DesignSpec = field(default_factory=DesignSpec)
    rearranged: bool = False

    def __post_init__(self):
        u = np.asarray(self.u_grid, dtype=np.float64).ravel()
        coef = np.asarray(self.coef, dtype=np.float64).reshape(u.shape[0], -1)
        if u.size == 0 or np.any(np.diff(u) <= 0) or u[0] <= 0 or u[-1] >= 1:
            raise ValueError("u_grid must be strictly increasing inside (0, 1)")
        if coef.shape[1] != self.design.size:
            raise ValueError(f"coef has {coef.shape[1]} columns, design needs {self.design.size}")
        object.__setattr__(self, "u_grid", u)
        object.__setattr__(self, "coef", coef)

    def predict(self, z) -> np.ndarray:
        """Predicted quantiles over the grid for design row(s) ``z``.

        Returns shape ``(K,)`` for one row, ``(n, K)`` for a matrix.
        """
        z = np.asarray(z, dtype=np.float64)
        out = z @ self.coef.T
        if self.rearranged:
            out = np.sort(out, axis=-1)
        return out

    def to_dict(self):
        return {"u_grid": self.u_grid.tolist(), "coef": self.coef.tolist(),
                "columns": self.design.names, "design": self.design.to_dict(),
                "rearranged": self.rearranged}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["u_grid"]), np.array(d["coef"]), DesignSpec.from_dict(d["design"]),
                   bool(d.get("rearranged", False)))


def check_loss(r, u: float, weights=None) -> float:
    """Weighted check loss sum of w * r * (u - 1{r<0})."""
    r = np.asarray(r, dtype=np.float64)
    rho = r * (u - (r < 0))
    return float(rho.sum() if weights is None else np.dot(weights, rho))


def _check_u(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any(~np.isfinite(u)) or np.any(u <= 0) or np.any(u >= 1):
        raise ValueError(f"quantile level must lie in (0, 1), got {u}")
    return u


def weighted_quantile(values, u, weights=None, presorted=False) -> np.ndarray:
    """Type-1 weighted sample quantile(s) of ``values`` at level(s) ``u``."""
    u = _check_u(u)
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DegenerateArmError("quantile of an empty sample")
    if weights is None:
        order = None if presorted else np.argsort(v, kind="stable")
        vs = v if presorted else v[order]
        c = np.arange(1, v.size + 1, dtype=np.float64)
    else:
        wt = np.asarray(weights, dtype=np.float64)
        order = None if presorted else np.argsort(v, kind="stable")
        vs = v if presorted else v[order]
        c = np.cumsum(wt if presorted else wt[order])
    total = c[-1]
    if total <= 0:
        raise DegenerateArmError("quantile of a sample with zero total weight")
    idx = np.searchsorted(c, u * total - QUANTILE_GUARD * total, side="left")
    return vs[np.minimum(idx, vs.size - 1)]


def _cells(Z):
    cells, inverse = np.unique(Z, axis=0, return_inverse=True)
    return cells, inverse.ravel()


def _solve_saturated(cells, inverse, m, w, u_grid):
    """Exact minimizer when every distinct design row is its own cell."""
    q = np.empty((cells.shape[0], u_grid.size))
    for c in range(cells.shape[0]):
        sel = inverse == c
        q[c] = weighted_quantile(m[sel], u_grid, w[sel])
    return np.linalg.solve(cells, q).T


def _collapse(Z, m, w):
    """Merge identical (z, m) rows, summing their weights."""
    keys, inverse = np.unique(np.column_stack([Z, m]), axis=0, return_inverse=True)
    wsum = np.bincount(inverse.ravel(), weights=w, minlength=keys.shape[0])
    return np.ascontiguousarray(keys[:, :-1]), np.ascontiguousarray(keys[:, -1]), wsum


class _CheckLossLP:
    """min sum w*rho_u(m - Z b) + extra'b, kept in one HiGHS instance.

    Only the column costs depend on u, so ``solve`` at a new level reuses
    the optimal basis of the previous call.
    """

    def __init__(self, Z, m, w, solver: str = "choose"):
        n, d = Z.shape
        self.n, self.d, self.w = n, d, w
        A = sp.hstack([sp.csc_matrix(Z), sp.identity(n, format="csc"), -sp.identity(n, format="csc")]).tocsc()
        lp = highspy.HighsLp()
        lp.num_col_, lp.num_row_ = d + 2 * n, n
        lp.col_cost_ = np.zeros(d + 2 * n)
        lp.col_lower_ = np.concatenate([np.full(d, -highspy.kHighsInf), np.zeros(2 * n)])
        lp.col_upper_ = np.full(d + 2 * n, highspy.kHighsInf)
        lp.row_lower_ = lp.row_upper_ = np.asarray(m, dtype=np.float64)
        lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
        lp.a_matrix_.start_ = A.indptr
        lp.a_matrix_.index_ = A.indices
        lp.a_matrix_.value_ = A.data
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("solver", solver)
        h.passModel(lp)
        self._h = h
        self._cols = np.arange(d + 2 * n, dtype=np.int32)
        self._warm = False

    def solve(self, u: float, extra=None):
        d, w = self.d, self.w
        cost = np.concatenate([np.zeros(d) if extra is None else extra, w * u, w * (1.0 - u)])
        h = self._h
        h.changeColsCost(cost.size, self._cols, cost)
        h.run()
        if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
            return None
        if not self._warm:
            # a cost change keeps the basis primal feasible: primal simplex from here on
            h.setOptionValue("solver", "simplex")
            h.setOptionValue("simplex_strategy", 4)
            self._warm = True
        return np.asarray(h.getSolution().col_value[:d], dtype=np.float64)


def _lp(Z, m, w, u, extra=None):
    """One cold check-loss LP; returns b or None."""
    solver = "simplex" if m.size <= 2000 else "ipm"
    return _CheckLossLP(Z, m, w, solver).solve(u, extra)


def _snap(Z, m, w, u, beta):
    """Move ``beta`` to the exact vertex through its d smallest residuals."""
    n, d = Z.shape
    r = m - Z @ beta
    order = np.argsort(np.abs(r), kind="stable")
    basis = []
    for i in order:
        trial = basis + [i]
        if np.linalg.matrix_rank(Z[trial]) == len(trial):
            basis = trial
            if len(basis) == d:
                break
    if len(basis) < d:
        return beta
    vertex = np.linalg.solve(Z[basis], m[basis])
    if check_loss(m - Z @ vertex, u, w) <= check_loss(r, u, w):
        return vertex
    return beta


def _globbed(Z, m, w, u, beta, band_rows):
    """Solve on a residual band, with settled rows folded into a linear term.

    Rows below the band enter as (1-u) z'b and rows above as -u z'b. That
    linear term never exceeds the true loss and equals it whenever the signs
    hold, so a solution with consistent signs is a global minimizer.
    """
    n, d = Z.shape
    total = w.sum()
    while band_rows < n:
        r = m - Z @ beta
        order = np.argsort(r, kind="stable")
        cum = np.cumsum(w[order])
        h = band_rows / (2.0 * n)
        lo = np.searchsorted(cum, (u - h) * total, side="left")
        hi = np.searchsorted(cum, (u + h) * total, side="right")
        below = np.zeros(n, dtype=bool)
        above = np.zeros(n, dtype=bool)
        below[order[:lo]] = True
        above[order[hi + 1:]] = True
        for _ in range(10):
            band = ~(below | above)
            extra = (1.0 - u) * (w[below] @ Z[below]) - u * (w[above] @ Z[above])
            new = _lp(Z[band], m[band], w[band], u, extra)
            if new is None:
                break
            r_new = m - Z @ new
            wrong_lo = below & (r_new > 0)
            wrong_hi = above & (r_new < 0)
            n_wrong = int(wrong_lo.sum() + wrong_hi.sum())
            if n_wrong == 0:
                return new
            if n_wrong > 0.1 * band_rows:
                beta = new
                break
            below &= ~wrong_lo
            above &= ~wrong_hi
        band_rows *= 2
    return _lp(Z, m, w, u)


def _globbed_solve(Z, m, w, u, start):
    n, d = Z.shape
    band_rows = int(min(n, max(50 * d, 2.0 * np.sqrt(d) * n ** (2.0 / 3.0))))
    if start is None:
        sub = np.random.default_rng(0).choice(n, size=band_rows, replace=False)
        start = _lp(Z[sub], m[sub], w[sub], u)
        if start is None:
            start = np.zeros(d)
    return _globbed(Z, m, w, u, np.asarray(start, dtype=np.float64), band_rows)


class QuantilePath:
    """Check-loss fits of one regression problem at any number of levels.

    The problem is validated and collapsed once. Fits are memoized by level,
    and levels up to ``PATH_THRESHOLD`` collapsed rows share one warm-started
    LP, so asking for a few hundred nearby levels costs little more than one
    cold solve. Results are deterministic given the order of requests.

    Parameters
    ----------
    Z : (n, d) design matrix.
    m : (n,) responses.
    weights : optional nonnegative row weights.

    Raises
    ------
    EstimationError
        If the design (restricted to positive-weight rows) is rank deficient.
    """

    def __init__(self, Z, m, weights=None):
        Z = np.asarray(Z, dtype=np.float64)
        m = np.asarray(m, dtype=np.float64).ravel()
        w = np.ones(m.size) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        keep = w > 0
        Z, m, w = Z[keep], m[keep], w[keep]
        d = Z.shape[1]
        cells, inverse = _cells(Z)
        if cells.shape[0] < d or np.linalg.matrix_rank(cells) < d:
            raise EstimationError(f"design matrix is rank deficient (need rank {d})")
        self.d = d
        self._saturated = cells.shape[0] == d
        if self._saturated:
            self._cells, self._inverse, self._m, self._w = cells, inverse, m, w
        else:
            self._Z, self._m, self._w = _collapse(Z, m, w)
        self._lp = None
        self._fits = {}

    def _solve_one(self, u: float, start):
        Z, m, w = self._Z, self._m, self._w
        if m.size <= PATH_THRESHOLD:
            if self._lp is None:
                self._lp = _CheckLossLP(Z, m, w, "simplex" if m.size <= 2000 else "ipm")
            beta = self._lp.solve(u)
        else:
            beta = _globbed_solve(Z, m, w, u, start)
        if beta is None:
            raise EstimationError(f"quantile LP failed at u={u}")
        return _snap(Z, m, w, u, beta)

    def coef(self, levels) -> np.ndarray:
        """(len(levels), d) coefficients; new levels are solved in increasing order."""
        levels = _check_u(np.atleast_1d(np.asarray(levels, dtype=np.float64)))
        todo = np.unique(levels[[float(u) not in self._fits for u in levels]])
        if todo.size and self._saturated:
            for u, row in zip(todo, _solve_saturated(self._cells, self._inverse, self._m, self._w, todo)):
                self._fits[float(u)] = row
        elif todo.size:
            start = None
            for u in todo:
                u = float(u)
                if start is None and self._fits:
                    near = min(self._fits, key=lambda v: abs(v - u))
                    start = self._fits[near]
                start = self._fits[u] = self._solve_one(u, start)
        return np.vstack([self._fits[float(u)] for u in levels])


def solve_quantile(Z, m, u: float, weights=None, start=None) -> np.ndarray:
    """Minimize the weighted check loss of ``m - Z b`` at level ``u``.

    Parameters
    ----------
    Z : (n, d) design matrix.
    m : (n,) responses.
    u : quantile level in (0, 1).
    weights : optional nonnegative row weights.
    start : optional starting coefficients, used only by the globbing route.

    Raises
    ------
    EstimationError
        If the design (restricted to positive-weight rows) is rank deficient.
    """
    u = float(_check_u(u))
    path = QuantilePath(Z, m, weights)
    if path._saturated or start is None or path._m.size <= PATH_THRESHOLD:
        return path.coef([u])[0]
    return path._solve_one(u, start)


def _binary_arms(table: MicrodataTable):
    x0, x1 = table.x == 0, table.x == 1
    if not x0.any() or not x1.any():
        raise DegenerateArmError("sample-quantile fit needs both exposure arms")
    wt = table.row_weights
    return (table.m[x0], wt[x0]), (table.m[x1], wt[x1])


def _sample_quantile_coef(table: MicrodataTable, u_grid: np.ndarray) -> np.ndarray:
    (m0, w0), (m1, w1) = _binary_arms(table)
    for wt, arm in ((w0, 0), (w1, 1)):
        if wt.sum() <= 0:
            raise DegenerateArmError(f"exposure arm x={arm} has zero total weight")
    q0 = weighted_quantile(m0, u_grid, w0)
    q1 = weighted_quantile(m1, u_grid, w1)
    return np.column_stack([q0, q1 - q0])


def fit_sample_quantiles(table: MicrodataTable, u_grid) -> QuantileFit:
    """Closed-form fit for intercept plus binary exposure.

    ``b0(u)`` is the type-1 sample u-quantile of the unexposed arm and
    ``b1(u)`` the exposed-arm quantile minus ``b0(u)``.
    """
    u_grid = _check_u(np.atleast_1d(u_grid))
    return QuantileFit(u_grid, _sample_quantile_coef(table, u_grid), DesignSpec())


def fit_quantile(table: MicrodataTable, u: float, design: DesignSpec = DesignSpec(), start=None) -> np.ndarray:
    """Coefficient vector minimizing the (weighted) check loss at ``u``."""
    _check_u(u)
    if design.is_binary_only:
        return _sample_quantile_coef(table, np.array([u], dtype=np.float64))[0]
    return solve_quantile(table_design(table, design), table.m, u, table.weights, start)


def rearrange(curves: np.ndarray) -> np.ndarray:
    """Monotone rearrangement: sort each predicted curve along u."""
    return np.sort(np.asarray(curves, dtype=np.float64), axis=-1)


def fit_quantile_grid(table: MicrodataTable, u_grid, design: DesignSpec = DesignSpec(),
                      rearranged: bool = False, path: "QuantilePath" = None) -> QuantileFit:
    """Separate check-loss fit at each u (no cross-level constraint).

    Pass ``path`` to share solved levels with other callers on the same
    table and design.
    """
    u_grid = _check_u(np.atleast_1d(u_grid))
    if design.is_binary_only:
        coef = _sample_quantile_coef(table, u_grid)
    else:
        coef = (path or table_path(table, design)).coef(u_grid)
    return QuantileFit(u_grid, coef, design, rearranged)


def table_path(table: MicrodataTable, design: DesignSpec) -> QuantilePath:
    return QuantilePath(table_design(table, design), table.m, table.weights)
