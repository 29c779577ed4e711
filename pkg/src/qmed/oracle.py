"""Closed-form normal/exponential mediation model: simulator and exact oracle.

The mediator given exposure x (and an optional binary covariate w) is normal
with mean ``b0 + b1 x + b2 w`` and variance ``(1 + x) ** sigma_exponent``; the
risk is ``exp(a0 + a1 x + a2 m + a3 w)``. Closed forms treat the ranking
exposure x* as continuous, interpolating the quantile function linearly
between the two arms, which is exactly what the linear quantile model does.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.stats import norm

from .data import MicrodataTable
from .quantreg import DesignSpec, QuantileFit

_SERIES_CUTOFF = 1e-3


class SimulationWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class OracleModel:
    alpha: tuple = (-3.0, 0.2, 0.3, 0.0)
    beta: tuple = (0.0, -0.5, 0.0)
    sigma_exponent: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if len(self.alpha) != 4 or len(self.beta) != 3:
            raise ValueError("alpha needs 4 entries and beta 3")

    @property
    def is_appendix_case(self) -> bool:
        """The textbook special case a0 = a3 = 0, b0 = b2 = 0."""
        return self.alpha[0] == 0 and self.alpha[3] == 0 and self.beta[0] == 0 and self.beta[2] == 0

    def sd(self, x):
        """Mediator standard deviation in arm x (x in {0, 1}) or its linear interpolation."""
        sd1 = 2.0 ** (self.sigma_exponent / 2.0)
        return 1.0 + np.asarray(x, dtype=np.float64) * (sd1 - 1.0)

    def to_dict(self):
        return {"alpha": list(self.alpha), "beta": list(self.beta), "sigma_exponent": self.sigma_exponent}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["alpha"]), tuple(d["beta"]), float(d.get("sigma_exponent", 2.0)))


def simulate(model: OracleModel, n: int, p_exposed: float = 0.5, seed: int = 0, outcome: str = "bernoulli",
             p_covariate: float = None) -> MicrodataTable:
    """Draw a table from the model.

    ``outcome="expected"`` stores the (clamped) risk itself instead of a
    Bernoulli draw, which removes outcome noise. With ``p_covariate`` a binary
    covariate ``w`` is drawn and included as a column.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 < p_exposed < 1:
        raise ValueError("p_exposed must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    a0, a1, a2, a3 = model.alpha
    b0, b1, b2 = model.beta
    x = (rng.random(n) < p_exposed).astype(np.int64)
    w = (rng.random(n) < p_covariate).astype(np.float64) if p_covariate is not None else np.zeros(n)
    m = b0 + b1 * x + b2 * w + model.sd(x) * rng.standard_normal(n)
    risk = np.exp(a0 + a1 * x + a2 * m + a3 * w)
    clamped = risk > 1
    if clamped.mean() > 0.05:
        warnings.warn(f"risk clamped to 1 on {clamped.mean():.1%} of draws; closed-form comparisons degrade",
                      SimulationWarning, stacklevel=2)
    risk = np.minimum(risk, 1.0)
    if outcome == "bernoulli":
        y = (rng.random(n) < risk).astype(np.float64)
    elif outcome == "expected":
        y = risk
    else:
        raise ValueError(f"unknown outcome type {outcome!r}")
    if p_covariate is None:
        return MicrodataTable(y, x, m)
    return MicrodataTable(y, x, m, w[:, None], ("w",))


def expected_event_rate(model: OracleModel, p_exposed: float = 0.5, w: float = 0.0, clamp: bool = True) -> float:
    """Population event rate E[min(1, risk)], by quadrature over the normal mediator."""
    a0, a1, a2, a3 = model.alpha
    b0, b1, b2 = model.beta
    total = 0.0
    for x, px in ((0, 1 - p_exposed), (1, p_exposed)):
        mu, sd = b0 + b1 * x + b2 * w, float(model.sd(x))
        if not clamp:
            val = math.exp(a0 + a1 * x + a3 * w + a2 * mu + 0.5 * (a2 * sd) ** 2)
        else:
            f = lambda z: min(1.0, math.exp(a0 + a1 * x + a3 * w + a2 * (mu + sd * z))) * norm.pdf(z)
            val = integrate.quad(f, -12, 12, limit=200)[0]
        total += px * val
    return total


def quantile(model: OracleModel, u, x, w: float = 0.0):
    """Conditional u-quantile of the mediator at exposure level x (x may be fractional)."""
    b0, b1, b2 = model.beta
    v = norm.ppf(u)
    return b0 + b2 * w + b1 * np.asarray(x, dtype=np.float64) + model.sd(x) * v


def quantile_coefficients(model: OracleModel, u, w: float = 0.0):
    """Intercept and exposure coefficient of the conditional quantile, ``(b0(u), b1(u))``."""
    v = norm.ppf(u)
    b0, b1, b2 = model.beta
    return b0 + b2 * w + v, b1 + v * (model.sd(1) - 1.0)


def closed_forms(model: OracleModel, u, x: int = 1, x_star=0.0, w: float = 0.0) -> dict:
    """Exact curves at level(s) ``u``.

    Keys: ``quantile`` (at exposure x), ``beta0_u``, ``beta1_u``, ``q``, ``s``
    and ``r`` (at ranking level x_star), ``risk`` (R(x, x_star, u)), ``nie_u``
    (x held at x), ``ace_u``, ``nde_u``, ``product`` (r * q / s at x_star) and
    ``null_model_product``, the homoscedastic simplification
    r * b1 * exp(-v^2/2) / (sqrt(2 pi) sigma) with sigma the x=0 standard
    deviation. The last one equals ``product`` when ``sigma_exponent = 0``.
    """
    u = np.asarray(u, dtype=np.float64)
    a0, a1, a2, a3 = model.alpha
    v = norm.ppf(u)
    beta0_u, beta1_u = quantile_coefficients(model, u, w)

    def risk(xx, xs):
        return np.exp(a0 + a1 * xx + a3 * w + a2 * (beta0_u + beta1_u * xs))

    s = model.sd(x_star) / norm.pdf(v)
    r = a2 * s * risk(x, x_star)
    nie = risk(x, 1.0) - risk(x, 0.0)
    ace = risk(1, 1.0) - risk(0, 0.0)
    sigma0 = float(model.sd(0))
    return {
        "quantile": quantile(model, u, x, w),
        "beta0_u": beta0_u,
        "beta1_u": beta1_u,
        "q": beta1_u,
        "s": s,
        "r": r,
        "risk": risk(x, x_star),
        "nie_u": nie,
        "ace_u": ace,
        "nde_u": ace - nie,
        "product": r / s * beta1_u,
        "null_model_product": r * model.beta[1] * np.exp(-v * v / 2) / (math.sqrt(2 * math.pi) * sigma0),
    }


def singular_level(model: OracleModel) -> float:
    """Level u at which b1(u) = 0 and the averaged exposure level is undefined."""
    return float(norm.cdf(-model.beta[1] / (model.sd(1) - 1.0))) if model.sd(1) != 1.0 else float("nan")


def x_star_from_t(t):
    """(1/t) log((e^t - 1)/t), with its series 1/2 + t/24 - t^3/2880 near t = 0."""
    t = np.asarray(t, dtype=np.float64)
    small = np.abs(t) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, t)
    direct = np.log(np.expm1(safe) / safe) / safe
    series = 0.5 + t / 24.0 - t ** 3 / 2880.0
    out = np.where(small, series, direct)
    return float(out) if out.ndim == 0 else out


def tilde_x_star(model: OracleModel, u, w: float = 0.0):
    """Exposure level in (0, 1) at which the chain-rule product equals the indirect effect.

    Raises
    ------
    ValueError
        If a2 = 0 or u is the singular level where b1(u) = 0 (u = Phi(-b1)
        in the textbook parameterization).
    """
    a2 = model.alpha[2]
    if a2 == 0:
        raise ValueError("averaged exposure level needs a2 != 0")
    _, beta1_u = quantile_coefficients(model, u, w)
    if np.any(beta1_u == 0):
        raise ValueError(f"u = Phi(-b1) = {singular_level(model):.6g} is excluded: b1(u) = 0 there")
    return x_star_from_t(a2 * beta1_u)


def closed_form_fit(model: OracleModel, u_grid, w: float = 0.0) -> QuantileFit:
    """QuantileFit carrying the exact no-covariate coefficients."""
    b0u, b1u = quantile_coefficients(model, np.asarray(u_grid, dtype=np.float64), w)
    return QuantileFit(np.asarray(u_grid, dtype=np.float64), np.column_stack([b0u, b1u]), DesignSpec())


@dataclass(frozen=True)
class ParadoxModel:
    """Risk curves that cross on the raw mediator scale but not in rank.

    The unexposed mediator is N(0, 1) and the exposed one N(-shift, 1). The
    baseline risk ``R0(m) = floor + a exp(-b m)`` falls steeply in m and the
    exposed risk is ``hazard_ratio * R0(m + shift)``; both are capped at 1.
    At equal rank the exposed risk is ``hazard_ratio`` times the unexposed one,
    while at equal raw m it is lower wherever R0 is steep enough.
    """

    shift: float = 1.0
    hazard_ratio: float = 2.0
    floor: float = 0.02
    a: float = 0.002
    b: float = 2.0

    def baseline(self, m):
        return np.minimum(1.0, self.floor + self.a * np.exp(-self.b * np.asarray(m, dtype=np.float64)))

    def risk(self, x, m):
        x = np.asarray(x)
        m = np.asarray(m, dtype=np.float64)
        return np.where(x == 1, np.minimum(1.0, self.hazard_ratio * self.baseline(m + self.shift)), self.baseline(m))


def simulate_paradox(model: ParadoxModel, n: int, p_exposed: float = 0.5, seed: int = 0) -> MicrodataTable:
    rng = np.random.default_rng(seed)
    x = (rng.random(n) < p_exposed).astype(np.int64)
    m = rng.standard_normal(n) - model.shift * x
    y = (rng.random(n) < model.risk(x, m)).astype(np.float64)
    return MicrodataTable(y, x, m)
