import numpy as np
import pytest

from qmed.effects import (EffectCurve, average_over_u, cell_weights, decompose_nie, integrate_over_profiles,
                          u_specific_effects)
from qmed.errors import AggregationError
from qmed.outcome import RateCurve, bin_edges


def curves_from(R, K=4):
    """R[(x, xs)] -> per-bin rates; returns rate curves keyed by x*."""
    mids = bin_edges(K)[1]
    out = {}
    for xs in (0, 1):
        at = np.full((2, K), 1e5)
        ev = np.vstack([np.broadcast_to(R[0, xs], K), np.broadcast_to(R[1, xs], K)]) * 1e5
        out[xs] = RateCurve(mids, xs, at, ev, 1e5)
    return out, mids


def test_identical_curves_null():
    c, mids = curves_from({(x, xs): 0.01 for x in (0, 1) for xs in (0, 1)})
    e = u_specific_effects(c, mids)
    assert np.all(e.nie == 0) and np.all(e.nde == 0) and np.all(e.ace == 0)


def test_arithmetic():
    c, mids = curves_from({(1, 1): 0.004, (1, 0): 0.003, (0, 0): 0.001, (0, 1): 0.002})
    e = u_specific_effects(c, mids)
    scaled = e.to_dict()
    assert scaled["nie"][0] == pytest.approx(100) and scaled["ace"][0] == pytest.approx(300)
    assert scaled["nde"][0] == pytest.approx(200)
    assert np.array_equal(e.nde, e.ace - e.nie)
    assert e.x_for_nie == 1 and e.x_star_for_nde == 0


def test_mismatched_binnings():
    c, mids = curves_from({(x, xs): 0.01 for x in (0, 1) for xs in (0, 1)})
    c[1] = RateCurve(bin_edges(5)[1], 1, np.ones((2, 5)), np.ones((2, 5)))
    with pytest.raises(ValueError):
        u_specific_effects(c, mids)


def test_decompose_nulls():
    assert np.all(decompose_nie(np.zeros(5), np.ones(5), np.arange(5.0)) == 0)
    assert np.all(decompose_nie(np.arange(5.0), np.ones(5), np.zeros(5)) == 0)
    assert np.isnan(decompose_nie([1.0], [1.0], [np.nan])[0])
    # sign logic: q < 0 and r > 0 give a negative product
    assert decompose_nie(-0.5, 0.2, 3.0) < 0


def test_average_constant_and_additivity():
    u = bin_edges(10)[1]
    e = EffectCurve(u, np.full(10, 0.3), np.full(10, 0.2), np.full(10, 0.5))
    out = average_over_u(e)
    assert out["nie"] == pytest.approx(0.3) and out["ace"] == out["nie"] + out["nde"]


def test_average_undefined_fraction():
    u = bin_edges(10)[1]
    nie = np.full(10, 1.0)
    nie[:2] = np.nan
    e = EffectCurve(u, nie, np.zeros(10), nie)
    with pytest.raises(AggregationError):
        average_over_u(e, max_undefined=0.1)
    assert average_over_u(e, max_undefined=0.25)["nie"] == 1.0


def test_cell_weights_are_bin_widths():
    np.testing.assert_allclose(cell_weights(bin_edges(8)[1]), np.full(8, 1 / 8))


def test_integrate_profiles():
    u = bin_edges(4)[1]
    a = EffectCurve(u, np.full(4, 1.0), np.full(4, 2.0), np.full(4, 3.0), profile="a")
    b = EffectCurve(u, np.full(4, 5.0), np.full(4, 2.0), np.full(4, 7.0), profile="b")
    assert integrate_over_profiles([a], [1.0]).nie.tolist() == a.nie.tolist()
    same = integrate_over_profiles([a, a], [0.5, 0.5])
    np.testing.assert_allclose(same.nie, a.nie)
    mix = integrate_over_profiles([a, b], [0.25, 0.75])
    np.testing.assert_allclose(mix.nie, 0.25 * 1 + 0.75 * 5)
    with pytest.raises(ValueError):
        integrate_over_profiles([a, b], [0.5, 0.6])
    with pytest.raises(ValueError):
        integrate_over_profiles([a, b], [1.0])


def test_json_nulls_for_nan():
    u = bin_edges(2)[1]
    d = EffectCurve(u, [np.nan, 1.0], [0.0, 0.0], [np.nan, 1.0]).to_dict({"nie": 1.0, "nde": 0.0, "ace": 1.0})
    assert d["nie"] == [None, 1.0] and d["r"] == [None, None]
