import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aisgraph.detect import (GpdFit, PointScore, classify, fit_gpd, gpd_quantile, node_recon_prob, pot_threshold,
                             read_report, reasoning_score, select_gamma, tune_gamma)


@pytest.mark.parametrize("E, P, g, rs", [(0.0, 1.0, 0.3, 0.0), (0.0, 1.0, 5.0, 0.0), (1.0, 0.0, 1.0, 1.0),
                                         (0.5, 0.8, 0.5, 0.4)])
def test_reasoning_score_examples(E, P, g, rs):
    assert reasoning_score(E, P, g) == pytest.approx(rs, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 1), st.floats(0, 1), st.floats(0, 20))
def test_reasoning_score_monotone_and_bounded(e1, e2, p1, p2, g):
    lo_e, hi_e = sorted((e1, e2))
    lo_p, hi_p = sorted((p1, p2))
    assert reasoning_score(lo_e, p1, g) <= reasoning_score(hi_e, p1, g) + 1e-12
    assert reasoning_score(e1, hi_p, g) <= reasoning_score(e1, lo_p, g) + 1e-12
    rs = reasoning_score(e1, p1, g)
    assert -1e-12 <= rs <= max(e1, 1.0) + 1e-12
    if e1 <= 1:
        assert rs <= 1 + 1e-12


def test_node_prob_perfect_and_uniform():
    A = np.triu(np.ones((4, 4)), 1)
    np.testing.assert_allclose(node_recon_prob(A, A), 1.0, atol=1e-5)
    np.testing.assert_allclose(node_recon_prob(np.full((4, 4), 0.5), A), 0.5)
    np.testing.assert_allclose(node_recon_prob(np.full((4, 4), 0.5), np.zeros((4, 4))), 0.5)


def test_node_prob_one_wrong_entry_decreases():
    A = np.triu(np.ones((5, 5)), 1)
    bad = A.copy()
    bad[0, 3] = 0.0
    assert node_recon_prob(bad, A)[0] < node_recon_prob(A, A)[0]
    np.testing.assert_allclose(node_recon_prob(bad, A)[1:], node_recon_prob(A, A)[1:])


def test_node_prob_single_node_is_one():
    assert node_recon_prob(np.array([[0.1]]), np.zeros((1, 1)))[0] == 1.0


def test_pot_recovers_exponential():
    x = np.random.default_rng(0).exponential(size=100_000)
    fit = pot_threshold(x, q=1e-2, init_quantile=0.98)
    analytic = fit.u + math.log(fit.n_exceed / (fit.q * fit.n))
    assert abs(fit.xi) <= 0.05
    assert abs(fit.sigma - 1) <= 0.05
    assert abs(fit.z_q - analytic) / analytic < 0.02
    assert not fit.fallback


def test_gpd_fit_recovers_heavy_and_bounded_tails():
    rng = np.random.default_rng(1)
    for xi, sigma in ((0.3, 2.0), (-0.3, 1.0)):
        u = rng.uniform(size=50_000)
        y = sigma / xi * (u ** (-xi) - 1)
        xi_hat, sigma_hat = fit_gpd(y)
        assert xi_hat == pytest.approx(xi, abs=0.03)
        assert sigma_hat == pytest.approx(sigma, rel=0.05)


def test_pot_threshold_monotone_in_q():
    x = np.random.default_rng(2).gamma(2.0, size=20_000)
    zs = [pot_threshold(x, q=q).z_q for q in (1e-1, 1e-2, 1e-3)]
    assert zs[0] <= zs[1] <= zs[2]


def test_pot_identical_scores_fall_back():
    with pytest.warns(RuntimeWarning):
        fit = pot_threshold(np.full(500, 0.7))
    assert fit.fallback and fit.z_q == 0.7 and fit.warning


def test_gpd_quantile_zero_shape_limit():
    a = gpd_quantile(1.0, 1e-10, 2.0, 0.01, 1000, 20)
    b = gpd_quantile(1.0, 1e-4, 2.0, 0.01, 1000, 20)
    assert a == pytest.approx(1.0 + 2.0 * math.log(20 / 10))
    assert a == pytest.approx(b, rel=1e-3)


def _scores(values):
    return [PointScore("T#0", float(i), v, 1.0, v, 0, "T") for i, v in enumerate(values)]


def _fit(z):
    return GpdFit(0.0, 0.0, 1.0, 10, 5, z, 0.01)


def test_classify_boundaries():
    assert classify(_scores([0.1, 0.2]), _fit(1.0), 1.0).n_anomalies == 0
    rep = classify(_scores([0.1, 2.0, 0.3]), _fit(1.0), 1.0)
    assert [s.label for s in rep.scores] == [0, 1, 0]
    assert classify(_scores([1.0]), _fit(1.0), 1.0).n_anomalies == 0


def test_classify_ignores_ship_ids():
    a = _scores([0.5, 1.5, 2.5])
    b = [PointScore(f"Z{s.track_id}", s.t, s.E, s.P, s.RS, 0, "Z") for s in a]
    la = [s.label for s in classify(a, _fit(1.0), 1.0).scores]
    lb = [s.label for s in classify(b, _fit(1.0), 1.0).scores]
    assert la == lb


def test_select_gamma_rules():
    assert select_gamma({2.0: 0.3}) == 2.0
    assert select_gamma({0.5: 0.05, 1.0: 0.02}) == 1.0
    assert select_gamma({0.5: 0.02, 1.0: 0.02, 0.1: 0.04}) == 0.5


def test_tune_gamma_degenerate_falls_back_to_one():
    E, P = np.zeros(200), np.ones(200)
    gamma, rates = tune_gamma(E, P, E, P)
    assert gamma == 1.0 and set(rates) == {0.1, 0.5, 1.0, 2.0, 5.0}


def test_tune_gamma_prefers_informative_component():
    rng = np.random.default_rng(3)
    # E is smooth noise; P carries rare heavy drops on validation only
    cal_E, cal_P = rng.exponential(size=3000), np.full(3000, 0.9)
    val_E, val_P = rng.exponential(size=3000), np.full(3000, 0.9)
    val_P[:300] = 0.0
    gamma, rates = tune_gamma(cal_E, cal_P, val_E, val_P)
    assert rates[gamma] == min(rates.values())
    assert gamma == 0.1


def test_report_round_trip():
    rep = classify(_scores([0.1, 2.0]), _fit(1.0), 0.5)
    rep.extra["note"] = "x"
    buf = io.StringIO()
    rep.write(buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 3 and "summary" in lines[-1]
    buf.seek(0)
    back = read_report(buf)
    assert back.scores == rep.scores and back.fit == rep.fit and back.gamma == 0.5
    assert back.extra == {"note": "x"}
