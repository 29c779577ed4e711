"""Bag of little bootstraps with counter-keyed random streams.

Every random draw is taken from a Philox generator whose key is derived from
``(seed, purpose, subset, replicate)``, so results do not depend on the order
in which work items run.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import MicrodataTable
from .errors import InferenceError, QmedError

_SUBSET_STREAM = 0
_WEIGHT_STREAM = 1


@dataclass(frozen=True)
class BLBConfig:
    """``b=None`` means ceil(n ** 0.7)."""

    S: int = 10
    b: Optional[int] = None
    R: int = 50
    seed: int = 0
    alpha: float = 0.05
    max_drop: float = 0.2

    def __post_init__(self):
        if self.S < 1 or self.R < 2:
            raise ValueError("need S >= 1 and R >= 2")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    def subset_size(self, n: int) -> int:
        b = math.ceil(n ** 0.7) if self.b is None else int(self.b)
        if not 1 <= b <= n:
            raise ValueError(f"subset size b={b} must lie in [1, n={n}]")
        return b

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ConfidenceBand:
    point: np.ndarray
    low: np.ndarray
    high: np.ndarray
    se: np.ndarray
    alpha: float
    method: dict = field(default_factory=dict)

    def subset(self, sl) -> "ConfidenceBand":
        return ConfidenceBand(self.point[sl], self.low[sl], self.high[sl], self.se[sl], self.alpha, self.method)


def _generator(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def subset_indices(n: int, b: int, seed: int, subset: int) -> np.ndarray:
    idx = _generator(seed, _SUBSET_STREAM, subset).choice(n, size=b, replace=False)
    return np.sort(idx)


def replicate_weights(n: int, b: int, seed: int, subset: int, rep: int) -> np.ndarray:
    """Multinomial(n, 1/b) counts over the b subset rows."""
    return _generator(seed, _WEIGHT_STREAM, subset, rep).multinomial(n, np.full(b, 1.0 / b)).astype(np.float64)


def _band_from(reps: np.ndarray, alpha: float):
    dev = reps - np.nanmean(reps, axis=0)
    lo = np.nanquantile(dev, alpha / 2, axis=0)
    hi = np.nanquantile(dev, 1 - alpha / 2, axis=0)
    return lo, hi, np.nanstd(reps, axis=0, ddof=1)


def blb_estimate(table: MicrodataTable, statistic: Callable[[MicrodataTable], np.ndarray], config: BLBConfig = BLBConfig(),
                 point=None, map_fn=map, keep_replicates: bool = False) -> ConfidenceBand:
    """Pointwise BLB band for a vector-valued statistic.

    Within each subset the replicate deviations from their mean give a
    centred percentile interval; the interval offsets and standard errors are
    averaged over subsets and attached to ``point`` (the full-data estimate,
    computed if not given). Replicates that raise a package error or return
    nothing finite are dropped; more than ``config.max_drop`` dropped raises
    ``InferenceError``. ``map_fn`` may be a parallel map; results are keyed,
    so the output is the same either way.
    """
    if table.weights is not None:
        raise ValueError("resampling expects an unweighted table")
    n = table.n
    b = config.subset_size(n)
    if point is None:
        point = np.asarray(statistic(table), dtype=np.float64)
    point = np.atleast_1d(np.asarray(point, dtype=np.float64))

    def run(item):
        s, r = item
        sub = table.take(subset_indices(n, b, config.seed, s))
        try:
            val = np.atleast_1d(np.asarray(statistic(sub.with_weights(replicate_weights(n, b, config.seed, s, r))),
                                           dtype=np.float64))
        except (QmedError, ValueError, FloatingPointError, np.linalg.LinAlgError):
            return None
        if val.shape != point.shape or not np.isfinite(val).any():
            return None
        return val

    items = [(s, r) for s in range(config.S) for r in range(config.R)]
    results = dict(zip(items, map_fn(run, items)))
    dropped = sum(v is None for v in results.values())
    if dropped > config.max_drop * len(items):
        raise InferenceError(f"{dropped} of {len(items)} bootstrap replicates failed (limit {config.max_drop:.0%})")

    lows, highs, ses = [], [], []
    replicates = {}
    for s in range(config.S):
        reps = [results[s, r] for r in range(config.R) if results[s, r] is not None]
        if len(reps) < 2:
            continue
        reps = np.vstack(reps)
        if keep_replicates:
            replicates[s] = reps
        # all-NaN columns (points undefined in every replicate) warn; they stay NaN
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lo, hi, se = _band_from(reps, config.alpha)
        lows.append(lo)
        highs.append(hi)
        ses.append(se)
    if not lows:
        raise InferenceError("no subset produced two usable replicates")
    lo, hi, se = np.mean(lows, axis=0), np.mean(highs, axis=0), np.mean(ses, axis=0)
    method = {"method": "bag of little bootstraps, centred percentile", "S": config.S, "b": b, "R": config.R,
              "seed": config.seed, "alpha": config.alpha, "dropped": dropped, "replicates": len(items)}
    if keep_replicates:
        method["replicate_values"] = replicates
    return ConfidenceBand(point, point + np.minimum(lo, 0.0), point + np.maximum(hi, 0.0), se, config.alpha, method)
