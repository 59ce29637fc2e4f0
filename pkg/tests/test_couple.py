import pytest

from forksim.engine import couple_check, reduce_hashrates, round_distribution
from forksim.errors import ParameterError

RATES = [0.35, 0.30, 0.20, 0.15]


def test_honest_reduction_exact():
    rep = couple_check(RATES, 0.8, "honest", seeds=[1, 2, 3], horizon_heights=800)
    assert rep.ok
    assert rep.rewards_equal and rep.views_isomorphic


def test_classic_sm_reduction_exact():
    rep = couple_check(RATES, 0.8, "classic_sm", seeds=[4, 5, 6],
                       horizon_heights=800)
    assert rep.ok


def test_strong_sm_reduction_exact_with_favor():
    rep = couple_check(RATES, 0.8, "strong_sm", seeds=[7, 8],
                       horizon_heights=600, tiebreak="favor-attacker")
    assert rep.ok


def test_mismatched_reduction_flags_first_divergence():
    a1, a2 = reduce_hashrates(RATES, 0.8)
    rep = couple_check(RATES, 0.8, "honest", seeds=[1, 2],
                       horizon_heights=400, wrong_honest_rate=a2 * 0.7)
    assert rep.first_divergence is not None
    assert not rep.ok


def test_non_class_driven_strategy_rejected():
    with pytest.raises(ParameterError):
        couple_check(RATES, 0.8, "usm_main", seeds=[1])


def test_three_player_unit_latency():
    rep = couple_check([0.3, 0.3, 0.4], 1.0, "honest", seeds=[9, 10],
                       horizon_heights=500)
    assert rep.ok
