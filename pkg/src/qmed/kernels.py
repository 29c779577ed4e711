"""Hot inner loops, each in a numba and a numpy flavour.

The public names dispatch on ``qmed._accel.USE_NUMBA``. Both flavours visit
rows in order and give bitwise-identical results.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

_CHUNK = 16384


# --- nearest-quantile bin assignment ---------------------------------------
#
# Rows sharing a design row (a "cell") share one fitted curve. On a
# nondecreasing curve the nearest knot is found by bisection; the lowest
# index among equal knot values is taken, which reproduces a first-minimum
# scan. Non-monotone curves fall back to the scan. Both flavours accumulate
# the curve in the same order, so they agree bitwise.

def _curves_numpy(cells, coef, rearrange):
    C, d = cells.shape
    Q = np.zeros((C, coef.shape[0]))
    for c in range(C):
        for j in range(d):
            Q[c] += cells[c, j] * coef[:, j]
    if rearrange:
        Q.sort(axis=1)
    return Q


def _assign_cells_numpy(m, cells, cell_of, coef, rearrange):
    Q = _curves_numpy(cells, coef, rearrange)
    K = Q.shape[1]
    out = np.empty(m.shape[0], dtype=np.int64)
    for c in range(Q.shape[0]):
        sel = np.flatnonzero(cell_of == c)
        q, v = Q[c], m[sel]
        if np.all(q[1:] >= q[:-1]):
            first = np.searchsorted(q, q, side="left")
            k = np.searchsorted(q, v, side="left")
            lo = first[np.maximum(k - 1, 0)]
            hi = np.minimum(k, K - 1)
            take_lo = (k == K) | ((k > 0) & (np.abs(v - q[lo]) <= np.abs(v - q[hi])))
            out[sel] = np.where(take_lo, lo, hi)
        else:
            for start in range(0, sel.size, _CHUNK):
                part = sel[start:start + _CHUNK]
                out[part] = np.argmin(np.abs(m[part, None] - q), axis=1)
    return out


@njit
def _assign_cells_numba(m, cells, cell_of, coef, rearrange):
    C, d = cells.shape
    K = coef.shape[0]
    Q = np.zeros((C, K))
    first = np.empty((C, K), dtype=np.int64)
    mono = np.empty(C, dtype=np.bool_)
    for c in range(C):
        for k in range(K):
            acc = 0.0
            for j in range(d):
                acc += cells[c, j] * coef[k, j]
            Q[c, k] = acc
        if rearrange:
            Q[c].sort()
        mono[c] = True
        first[c, 0] = 0
        for k in range(1, K):
            if Q[c, k] < Q[c, k - 1]:
                mono[c] = False
            first[c, k] = first[c, k - 1] if Q[c, k] == Q[c, k - 1] else k
    n = m.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = cell_of[i]
        v = m[i]
        if mono[c]:
            lo, hi = 0, K
            while lo < hi:
                mid = (lo + hi) // 2
                if Q[c, mid] < v:
                    lo = mid + 1
                else:
                    hi = mid
            if lo == 0:
                out[i] = 0
            elif lo == K:
                out[i] = first[c, K - 1]
            elif abs(v - Q[c, lo - 1]) <= abs(v - Q[c, lo]):
                out[i] = first[c, lo - 1]
            else:
                out[i] = lo
        else:
            best = 0
            best_e = abs(v - Q[c, 0])
            for k in range(1, K):
                e = abs(v - Q[c, k])
                if e < best_e:
                    best_e = e
                    best = k
            out[i] = best
    return out


def assign_nearest(m, rows, coef, rearrange=False, cell_of=None):
    """Index of the fitted quantile closest to each observation.

    Parameters
    ----------
    m : (n,) mediator values
    rows : (n, d) design rows at the ranking exposure, or (C, d) distinct
        rows when ``cell_of`` is given
    coef : (K, d) coefficients at the K bin midpoints
    rearrange : sort each fitted curve before comparing
    cell_of : optional (n,) index of each observation's row in ``rows``

    Returns
    -------
    (n,) int64 array of 0-based bin indices; ties resolve to the lower index.
    """
    m = np.ascontiguousarray(m, dtype=np.float64)
    rows = np.ascontiguousarray(np.atleast_2d(rows), dtype=np.float64)
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    if cell_of is None:
        cell_of = np.arange(m.shape[0], dtype=np.int64)
    cell_of = np.ascontiguousarray(cell_of, dtype=np.int64)
    if USE_NUMBA:
        return _assign_cells_numba(m, rows, cell_of, coef, bool(rearrange))
    return _assign_cells_numpy(m, rows, cell_of, coef, bool(rearrange))


# --- per-bin totals ----------------------------------------------------------

def _bin_totals_numpy(bins, x, y, w, K):
    at_risk = np.zeros((2, K))
    events = np.zeros((2, K))
    for arm in (0, 1):
        sel = x == arm
        at_risk[arm] = np.bincount(bins[sel], weights=w[sel], minlength=K)
        events[arm] = np.bincount(bins[sel], weights=(w * y)[sel], minlength=K)
    return at_risk, events


@njit
def _bin_totals_numba(bins, x, y, w, K):
    at_risk = np.zeros((2, K))
    events = np.zeros((2, K))
    for i in range(bins.shape[0]):
        a = x[i]
        at_risk[a, bins[i]] += w[i]
        events[a, bins[i]] += w[i] * y[i]
    return at_risk, events


def bin_totals(bins, x, y, w, K):
    """Weighted at-risk and event totals per (exposure arm, bin)."""
    bins = np.ascontiguousarray(bins, dtype=np.int64)
    x = np.ascontiguousarray(x, dtype=np.int64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if USE_NUMBA:
        return _bin_totals_numba(bins, x, y, w, int(K))
    return _bin_totals_numpy(bins, x, y, w, int(K))
