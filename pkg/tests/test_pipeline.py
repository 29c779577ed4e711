import numpy as np
import pytest

from qmed.errors import AggregationError
from qmed.oracle import OracleModel, closed_forms, simulate
from qmed.pipeline import EstimationConfig, effect_statistic, estimate_effects, fit_pipeline


@pytest.fixture(scope="module")
def noise_free():
    mod = OracleModel()
    t = simulate(mod, 200_000, seed=7, outcome="expected")
    curve, overall = estimate_effects(t, EstimationConfig(K=50))
    return mod, curve, overall


def test_noise_free_nie_matches_closed_form(noise_free):
    mod, curve, _ = noise_free
    sel = (curve.u_grid > 0.099) & (curve.u_grid < 0.901)
    truth = closed_forms(mod, curve.u_grid[sel], x=1)["nie_u"]
    assert np.all(np.abs(curve.nie[sel] - truth) <= np.maximum(0.15 * np.abs(truth), 0.01))
    assert np.max(np.abs(curve.nie[sel] - truth)) < 1e-3


def test_noise_free_product_tracks_nie_away_from_zero(noise_free):
    _, curve, _ = noise_free
    sel = (curve.u_grid > 0.099) & (curve.u_grid < 0.901) & (np.abs(curve.nie) > 2e-3)
    rel = np.abs(curve.product[sel] - curve.nie[sel]) / np.abs(curve.nie[sel])
    assert sel.sum() >= 30 and rel.max() <= 0.25


def test_components_against_oracle(noise_free):
    mod, curve, _ = noise_free
    sel = (curve.u_grid > 0.099) & (curve.u_grid < 0.901)
    u = curve.u_grid[sel]
    cf0, cf1 = closed_forms(mod, u, x=1, x_star=0), closed_forms(mod, u, x=1, x_star=1)
    np.testing.assert_allclose(curve.q[sel], cf0["q"], atol=0.05)
    np.testing.assert_allclose(curve.inv_s[sel], 2 / (cf0["s"] + cf1["s"]), rtol=0.05)
    np.testing.assert_allclose(curve.r[sel], 0.5 * (cf0["r"] + cf1["r"]), rtol=0.1)


def test_overall_additive(noise_free):
    _, _, overall = noise_free
    assert overall["ace"] == pytest.approx(overall["nie"] + overall["nde"], abs=1e-15)


def test_x_for_nie_zero_swaps_reference():
    t = simulate(OracleModel(), 20_000, seed=1)
    c1, _ = estimate_effects(t, EstimationConfig(K=10))
    c0, _ = estimate_effects(t, EstimationConfig(K=10, x_for_nie=0))
    np.testing.assert_allclose(c0.ace, c1.ace)
    assert c0.x_star_for_nde == 1
    assert not np.allclose(c0.nie, c1.nie)


def test_covariate_run_and_statistic_layout():
    t = simulate(OracleModel(beta=(0, -0.5, 0.3)), 20_000, seed=2, p_covariate=0.4)
    cfg = EstimationConfig(K=10, covariates=("w",))
    fit = fit_pipeline(t, cfg)
    assert sorted(p.label for p in fit.profiles) == ["w=0", "w=1"]
    assert sum(p.weight for p in fit.profiles) == pytest.approx(1.0)
    vec = effect_statistic(cfg)(t)
    assert vec.shape == (7 * cfg.u_grid.size + 3,)


def test_aggregation_guard():
    t = simulate(OracleModel(), 5000, seed=3)
    with pytest.raises(AggregationError):
        estimate_effects(t, EstimationConfig(K=10, max_undefined=-1.0))
