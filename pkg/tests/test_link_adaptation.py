import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import logistic_bler, student_t_quantile as t_quantile_oracle
from snlink.errors import ConfigurationError, ContractViolation
from snlink.feedback import dequantize_cqi, quantize_cqi
from snlink.link_adaptation import (DEFAULT_MCS, NONE, McsDecision, McsTable, MovingAverage, bler,
                                    delayed_estimate_select, genie_select, ma_predict, point_select,
                                    select_mcs, sinr_posterior_from_ipv, student_t_quantile)
from snlink.sptpr import StudentTPosterior

TARGET = 1e-3


def test_default_table_layout():
    t = DEFAULT_MCS
    assert len(t) == 29
    assert t.b_db[0] == -6.0 and t.b_db[28] == 22.0
    assert t.se[0] == pytest.approx(0.2) and t.se[28] == pytest.approx(5.6)
    assert set(t.k_per_db) == {5.0}


@pytest.mark.parametrize("kw", [dict(se=(1.0, 0.5), b_db=(0.0, 1.0), k_per_db=(1.0, 1.0)),
                                dict(se=(0.5, 1.0), b_db=(1.0, 1.0), k_per_db=(1.0, 1.0)),
                                dict(se=(0.5, 1.0), b_db=(0.0, 1.0), k_per_db=(1.0, 0.0)),
                                dict(se=(0.5,), b_db=(0.0, 1.0), k_per_db=(1.0, 1.0))])
def test_invalid_tables(kw):
    with pytest.raises(ConfigurationError):
        McsTable(**kw)


def test_table_csv_round_trip(tmp_path):
    p = tmp_path / "mcs.csv"
    DEFAULT_MCS.save_csv(p)
    assert p.read_text().splitlines()[0] == "index,se,b_db,k_per_db"
    assert McsTable.load_csv(p) == DEFAULT_MCS


def test_bler_examples():
    b7 = DEFAULT_MCS.b_db[7]
    assert bler(b7, 7) == pytest.approx(0.5, abs=1e-15)
    assert bler(b7 + math.log(1e6 - 1) / 5, 7) == pytest.approx(1e-6, rel=1e-9)
    assert bler(b7 + 2.7631, 7) == pytest.approx(1e-6, rel=1e-4)
    assert bler(-1e3, 7) == 1.0


@given(st.floats(-30, 40), st.integers(0, 28))
def test_bler_matches_logistic_oracle(s, m):
    assert bler(s, m) == pytest.approx(logistic_bler(s, DEFAULT_MCS.b_db[m], 5.0), rel=1e-12, abs=1e-300)


@given(st.floats(-20, 30), st.floats(0.01, 5), st.integers(0, 27))
def test_bler_monotonicity(s, ds, m):
    assert bler(s + ds, m) <= bler(s, m)
    assert bler(s, m + 1) >= bler(s, m)
    if 1e-300 < bler(s, m) < 1 - 1e-12:
        assert bler(s + ds, m) < bler(s, m)
        assert bler(s, m + 1) > bler(s, m)


def test_bler_rejects_bad_index():
    with pytest.raises(ContractViolation):
        bler(0.0, 29)


def test_degenerate_posteriors():
    assert select_mcs(StudentTPosterior(60.0, 0.0, 3.0), TARGET).mcs == 28
    assert select_mcs(StudentTPosterior(-20.0, 1e-12, 3.0), TARGET).mcs == NONE


def test_growing_scale_never_raises_index():
    picks = [select_mcs(StudentTPosterior(10.0, s, 3.0), TARGET).mcs for s in (0.01, 1.0, 4.0)]
    assert picks == sorted(picks, reverse=True)
    assert picks[0] > picks[-1]


@given(st.lists(st.floats(-10, 30), min_size=2, max_size=20), st.lists(st.floats(0.0, 10), min_size=2, max_size=20),
       st.sampled_from([3.0, 5.0, 30.0]))
def test_policy_is_monotone_on_grids(means, scales, nu):
    means, scales = sorted(means), sorted(scales)
    for s in scales:
        picks = [select_mcs(StudentTPosterior(m, s, nu), TARGET).mcs for m in means]
        assert picks == sorted(picks)
    for m in means:
        picks = [select_mcs(StudentTPosterior(m, s, nu), TARGET).mcs for s in scales]
        assert picks == sorted(picks, reverse=True)


@pytest.mark.parametrize("q,nu,mean,scale", [(0.05, 3.0, 10.0, 2.0), (0.01, 5.0, -3.0, 0.5), (0.2, 30.0, 1.0, 9.0),
                                             (0.5, 3.0, 4.0, 1.0)])
def test_quantile_matches_numeric_inversion(q, nu, mean, scale):
    assert student_t_quantile(mean, scale, nu, q) == pytest.approx(t_quantile_oracle(q, nu, mean, scale), abs=1e-6)


@given(st.floats(-10, 30), st.floats(0, 10), st.sampled_from([3.0, 4.5, 30.0]), st.sampled_from([1e-6, 1e-3, 0.1]),
       st.sampled_from([0.01, 0.05, 0.5]))
def test_every_selection_satisfies_the_constraint(mean, scale, nu, target, q):
    post = StudentTPosterior(mean, scale, nu)
    d = select_mcs(post, target, q=q)
    if d.mcs != NONE:
        gamma = student_t_quantile(mean, scale, nu, q) if scale > 0 else mean
        assert bler(gamma, d.mcs) <= target * (1 + 1e-9)
        assert d.predicted_bler <= target * (1 + 1e-9)
        if d.mcs < 28:
            assert bler(gamma, d.mcs + 1) > target


@pytest.mark.parametrize("kw", [dict(target=0.0), dict(target=1.0), dict(q=0.0), dict(q=0.6)])
def test_select_rejects_bad_arguments(kw):
    args = dict(target=TARGET, q=0.05) | kw
    with pytest.raises(ConfigurationError):
        select_mcs(StudentTPosterior(5.0, 1.0, 3.0), args["target"], q=args["q"])


def test_genie_boundary_of_index_seven():
    edge = DEFAULT_MCS.b_db[7] + math.log(1 / TARGET - 1) / 5.0
    assert edge == pytest.approx(2.381351, abs=1e-6)
    assert genie_select(edge, TARGET).mcs == 7
    assert genie_select(edge - 1e-6, TARGET).mcs == 6


@given(st.floats(-15, 35))
def test_genie_is_feasible_and_maximal(s):
    d = genie_select(s, TARGET)
    if d.mcs == NONE:
        assert d.realized_bler == 1.0
        return
    assert d.realized_bler == d.predicted_bler <= TARGET * (1 + 1e-9)
    feasible = [m for m in range(29) if bler(s, m) <= TARGET]
    assert all(DEFAULT_MCS.se[d.mcs] >= DEFAULT_MCS.se[m] for m in feasible)


def test_moving_average_converges_to_constant():
    for rho in (0.05, 0.3, 1.0):
        f = MovingAverage(rho)
        f.update(0.0)
        for _ in range(math.ceil(5 / rho)):
            v = f.update(20.0)
        assert abs(v - 20.0) <= 0.01 * 20.0


def test_moving_average_rho_one_is_passthrough():
    xs = [3.0, -1.0, 7.5]
    assert [MovingAverage(1.0).update(x) for x in xs] == xs
    assert ma_predict(xs, 1.0) == 7.5


@given(st.floats(0.01, 1.0), st.floats(-20, 20), st.floats(-20, 20), st.integers(1, 60))
def test_step_response_is_monotone_without_overshoot(rho, a, b, n):
    f = MovingAverage(rho)
    f.update(a)
    prev = a
    for _ in range(n):
        v = f.update(b)
        assert min(a, b) - 1e-12 <= v <= max(a, b) + 1e-12
        assert (v - prev) * (b - a) >= -1e-12
        prev = v


def test_moving_average_validation():
    with pytest.raises(ConfigurationError):
        MovingAverage(0.0)
    with pytest.raises(ContractViolation):
        ma_predict([], 0.5)


def test_delayed_estimate_equals_genie_at_bin_centres():
    for k in range(29):
        assert delayed_estimate_select(k, TARGET).mcs == genie_select(dequantize_cqi(k), TARGET).mcs


def test_rising_interference_breaks_the_delayed_estimate():
    # cycle 0: clean channel, cycle 1: a strong interferer appears; the decision
    # at cycle 1 still uses the report from cycle 0
    sinr = [20.0, 8.0]
    d = delayed_estimate_select(quantize_cqi(sinr[0]), TARGET)
    realized = d.realize(sinr[1])
    assert realized.realized_bler > d.predicted_bler


def test_none_decision_counts_as_failure():
    d = McsDecision(0, 0, NONE, 1.0).realize(30.0)
    assert (d.realized_bler, d.se_realized, d.feasible) == (1.0, 0.0, False)


def test_realize_fills_expected_se_without_rng():
    d = point_select(10.0, TARGET).realize(10.0)
    assert d.se_realized == pytest.approx((1 - d.realized_bler) * DEFAULT_MCS.se[d.mcs])


@given(st.floats(-90, -30), st.floats(0.0, 20.0))
def test_sinr_posterior_delta_method(ipv, var):
    signal, noise, nu = -20.0, -50.0, 3.0
    post = sinr_posterior_from_ipv(ipv, var, signal, noise, nu)
    exact = signal - 10 * np.log10(10 ** (ipv / 10) + 10 ** (noise / 10))
    assert float(post.mean) == pytest.approx(exact, abs=1e-9)
    h = 1e-5
    slope = (sinr_posterior_from_ipv(ipv + h, 0, signal, noise, nu).mean
             - sinr_posterior_from_ipv(ipv - h, 0, signal, noise, nu).mean) / (2 * h)
    assert float(post.variance) == pytest.approx(slope**2 * var, rel=1e-5, abs=1e-12)
