import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from d2dsched.channel import FadingSample, achievable_set, power_matrix, required_power, sample_fading
from d2dsched.scenario import D2DPair, ScenarioConfig, default_amc_table

CFG = ScenarioConfig()
TABLE = CFG.amc_table()


def test_required_power_hand_value():
    pair = D2DPair(0, 10.0, 1e8)
    pt = required_power(pair, 0.5, 1, CFG, TABLE)
    # S_1 = 1, N0 = 10**-12.5 W, L = 1e8, |h|^2 = 0.5
    assert pt.power_w == pytest.approx(1e8 * 10 ** -12.5 / 0.5)
    assert pt.feasible and pt.rate_bps == TABLE.rates_bps[0]
    assert pt.m == 1


def test_capped_power_is_infeasible():
    pair = D2DPair(0, 300.0, 1e13)
    pt = required_power(pair, FadingSample(0.1), 15, CFG, TABLE)
    assert not pt.feasible
    assert pt.power_w == CFG.p_max_w
    assert pt.rate_bps == 0.0


def test_zero_fading_is_infeasible():
    pt = required_power(D2DPair(0, 10.0, 1e6), 0.0, 1, CFG, TABLE)
    assert not pt.feasible


@pytest.mark.parametrize("m", [0, 16])
def test_index_out_of_range(m):
    with pytest.raises(IndexError):
        required_power(D2DPair(0, 10.0, 1e6), 1.0, m, CFG, TABLE)


def test_achievable_set_power_increases_with_rate():
    pts = achievable_set(D2DPair(0, 10.0, 1e9), 1.0, CFG, TABLE)
    powers = [p.power_w for p in pts]
    assert len(pts) == TABLE.size
    assert all(b >= a for a, b in zip(powers, powers[1:]))


@given(
    st.lists(st.floats(1.0, 1e12), min_size=1, max_size=6),
    st.floats(1e-4, 20.0),
)
def test_power_matrix_matches_scalar(losses, h2):
    power, feasible = power_matrix(np.array(losses), np.full(len(losses), h2), CFG.noise_power_w(), CFG.p_max_w, TABLE)
    assert power.shape == (len(losses), TABLE.size)
    for i, loss in enumerate(losses):
        for m in (1, 8, 15):
            pt = required_power(D2DPair(i, 1.0, loss), h2, m, CFG, TABLE)
            assert power[i, m - 1] == pytest.approx(pt.power_w)
            assert feasible[i, m - 1] == pt.feasible


def test_sample_fading_is_unit_exponential(rng):
    assert isinstance(sample_fading(rng), FadingSample)
    h2 = sample_fading(rng, 200_000)
    assert h2.min() >= 0
    # Exp(1): mean 1, variance 1; 5 sigma bands
    assert abs(h2.mean() - 1) < 5 / np.sqrt(h2.size)
    assert abs(np.mean(h2 > 1.0) - np.exp(-1)) < 5 * 0.5 / np.sqrt(h2.size)


def test_table_scaling():
    per_rb = default_amc_table()
    assert np.allclose(TABLE.rates_bps, per_rb.rates_bps * CFG.alloc_rb)
