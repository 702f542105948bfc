import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snlink.errors import ConfigurationError, ContractViolation
from snlink.feedback import (CqiReport, CqiTable, FeedbackChannel, dequantize_cqi, quantize_cqi, sinr_to_esnr,
                             write_cqi_csv)

T = CqiTable()


def test_default_table():
    assert (T.n_levels, T.gamma_min_db, T.step_db) == (29, -8.0, 1.0)


@pytest.mark.parametrize("kw", [dict(n_levels=1), dict(step_db=0.0), dict(step_db=-1.0)])
def test_invalid_table(kw):
    with pytest.raises(ConfigurationError):
        CqiTable(**kw)


def test_zero_error_is_identity():
    assert sinr_to_esnr(10.0, 0.0) == 10.0


def test_estimation_error_is_zero_mean():
    rng = np.random.default_rng(0)
    x = np.full(100_000, 10.0)
    assert abs(np.mean(sinr_to_esnr(x, 0.5, rng) - x)) < 0.02


def test_floor_is_propagated():
    rng = np.random.default_rng(0)
    assert sinr_to_esnr(-200.0, 0.5, rng, floor_db=-200.0) == -200.0


def test_rng_required_with_error():
    with pytest.raises(ContractViolation):
        sinr_to_esnr(1.0, 0.5)


def test_quantizer_examples():
    assert quantize_cqi(T.gamma_min_db) == 0
    assert quantize_cqi(T.gamma_min_db + (T.n_levels - 1) * T.step_db) == T.n_levels - 1
    assert quantize_cqi(100.0) == T.n_levels - 1
    assert quantize_cqi(-2.3) == 5
    assert quantize_cqi(-100.0) == 0


def test_dequantizer_examples():
    assert dequantize_cqi(0) == -7.5
    assert dequantize_cqi(T.n_levels - 1) == T.gamma_min_db + (T.n_levels - 0.5) * T.step_db


@pytest.mark.parametrize("k", [-1, 29, 2.5])
def test_dequantizer_rejects_bad_index(k):
    with pytest.raises(ContractViolation):
        dequantize_cqi(k)


def test_round_trip_on_every_index():
    k = np.arange(T.n_levels)
    assert np.array_equal(quantize_cqi(dequantize_cqi(k)), k)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_quantizer_is_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert quantize_cqi(lo) <= quantize_cqi(hi)


@given(st.floats(T.gamma_min_db, T.top_db, exclude_max=True))
def test_dequantization_error_at_most_half_step(x):
    assert abs(dequantize_cqi(quantize_cqi(x)) - x) <= T.step_db / 2 + 1e-12


def _run_channel(d, n):
    ch = FeedbackChannel(d)
    out = []
    for t in range(n):
        ch.push(CqiReport(0, (t % 29,), t))
        r = ch.pop(t)
        out.append(r)
    return out


def test_zero_delay_returns_this_cycle():
    out = _run_channel(0, 5)
    assert [r.generated_at for r in out] == [0, 1, 2, 3, 4]


def test_delay_two_first_pop_at_two():
    out = _run_channel(2, 6)
    assert out[:2] == [None, None]
    assert out[2].generated_at == 0 and out[2].delivered_at == 2


def test_delay_ten_over_hundred_cycles_delivers_ninety():
    assert sum(r is not None for r in _run_channel(10, 100)) == 90


@given(st.integers(0, 12), st.integers(1, 80))
def test_delay_line_preserves_order_and_loses_nothing(d, n):
    out = [r for r in _run_channel(d, n + d) if r is not None]
    assert [r.generated_at for r in out] == list(range(n))
    assert all(r.delivered_at - r.generated_at == d for r in out)


def test_out_of_order_push_is_rejected():
    ch = FeedbackChannel(1)
    ch.push(CqiReport(0, (1,), 3))
    with pytest.raises(ContractViolation):
        ch.push(CqiReport(0, (1,), 3))


def test_cqi_csv_columns(tmp_path):
    p = tmp_path / "c.csv"
    n = write_cqi_csv(p, [CqiReport(1, (3, 4), 7)])
    rows = list(csv.DictReader(open(p)))
    assert n == 2
    assert rows[1] == {"cycle": "7", "sn": "1", "sa": "1", "cqi": "4", "generated_at": "7"}
