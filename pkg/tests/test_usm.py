import math
from collections import defaultdict

import numpy as np
import pytest

from forksim.engine import (ATTACKER_ONLY, BOTH, HONEST_ONLY, Game, GameParams,
                            run_game)
from forksim.errors import ParameterError
from forksim.strategies import make_strategy
from forksim.usm import StealthMain, validity_bound

A, H, B = ATTACKER_ONLY, HONEST_ONLY, BOTH


def params(alpha=0.4, horizon=2000, seed=1, tiebreak="against-attacker", **kw):
    return GameParams(alpha=alpha, horizon_heights=horizon, seed=seed,
                      tiebreak=tiebreak, **kw)


# --- validity ------------------------------------------------------------

def test_validity_ranges_enforced():
    with pytest.raises(ParameterError):
        make_strategy("usm_warmup", params(tiebreak="favor-attacker"), beta=0.45)
    with pytest.raises(ParameterError):
        make_strategy("usm_main", params(alpha=0.4), beta=0.17)   # > alpha^2
    p = GameParams(alpha_prime=0.4225, beta_prime=0.05, horizon_heights=100,
                   seed=0, tiebreak="against-attacker")
    with pytest.raises(ParameterError):
        make_strategy("usm_general", p, beta=0.04)                # below natural rate
    with pytest.raises(ParameterError):
        make_strategy("usm_general", p, beta=0.10)                # above a'^2/2


def test_stealth_strategies_require_their_tiebreak():
    with pytest.raises(ParameterError):
        make_strategy("usm_main", params(tiebreak="favor-attacker"), beta=0.1)
    with pytest.raises(ParameterError):
        make_strategy("usm_warmup", params(tiebreak="against-attacker"), beta=0.1)


def test_validity_bounds():
    d = params(alpha=0.4).distribution()
    assert validity_bound("usm_warmup", d) == pytest.approx(0.4)
    assert validity_bound("usm_main", d) == pytest.approx(0.16)


def test_beta_margin_scaling():
    s = make_strategy("usm_main", params(alpha=0.4), beta_margin=0.5)
    assert s.beta == pytest.approx(0.08)


# --- bias values at the determination moments ------------------------------

def test_main_safe_block_probability_table():
    s = StealthMain(params(alpha=0.4), beta=0.1)
    assert s._p_safe("S", 1) == pytest.approx(0.64)
    assert s._p_safe("U", 2) == pytest.approx(0.64)
    assert s._p_safe("P", 1) == pytest.approx(0.16)
    assert s._p_safe("Z", 0) == pytest.approx(0.4)


def test_warmup_initial_bias_quarter():
    p = params(alpha=0.4, tiebreak="favor-attacker")
    s = make_strategy("usm_warmup", p, beta=0.1)
    g = Game(p, s)
    s.reset(g)
    assert s.beta / s.pending_p == pytest.approx(0.25)


def test_warmup_single_over_public_tip_broadcast_immediately():
    # with beta tiny the first coin is Single almost surely
    res_states = None
    p = params(alpha=0.4, tiebreak="favor-attacker", horizon=2, record_view=True)
    g = Game(p, make_strategy("usm_warmup", p, beta=1e-9),
             outcomes=np.array([A, H, H, H, H, H], dtype=np.int8))
    res = g.run()
    blk = [b for b in res.view.blocks.values() if b.creator == 1][0]
    assert blk.broadcast_round == blk.created_round


# --- behavior on scripted rounds -------------------------------------------

def scripted(name, outcomes, horizon, beta, alpha=0.4,
             tiebreak="against-attacker", seed=0, **kw):
    p = GameParams(alpha=alpha, horizon_heights=horizon, seed=seed,
                   tiebreak=tiebreak, record_view=True)
    g = Game(p, make_strategy(name, p, beta=beta, **kw),
             outcomes=np.asarray(outcomes, dtype=np.int8))
    return g.run()


def test_main_pivotal_cap_wins_conflict():
    # beta at the validity cap makes the first coin land Pair for this seed;
    # honest contests, attacker caps with a forced Single
    res = scripted("usm_main", [A, H, A, H, H, H, H, H], horizon=3,
                   beta=0.16, seed=2)
    s = list(res.states.states)
    if s[0] == 1:   # coin gave Pair: cap should have won both heights
        assert res.chain_creator[0] == 1 and res.chain_creator[1] == 1
        assert s[1] == 0


def test_label_matches_realized_state_main():
    p = params(alpha=0.42, horizon=30_000, seed=5)
    strat = make_strategy("usm_main", p, beta=0.12, debug=True)
    res = Game(p, strat).run()
    labels = np.array([lab for (_, _, lab) in strat.det_log], dtype=np.uint8)
    assert (labels[:res.horizon] == res.states.states).all()


def test_label_matches_realized_state_general():
    p = GameParams(alpha_prime=0.4225, beta_prime=0.05, horizon_heights=30_000,
                   seed=6, tiebreak="against-attacker")
    strat = make_strategy("usm_general", p, beta=0.07, lead_cap=24, debug=True)
    res = Game(p, strat).run()
    labels = np.array([lab for (_, _, lab) in strat.det_log], dtype=np.uint8)
    assert (labels[:res.horizon] == res.states.states).all()


def test_label_matches_realized_state_warmup():
    p = params(alpha=0.4, horizon=30_000, seed=7, tiebreak="favor-attacker")
    strat = make_strategy("usm_warmup", p, beta=0.3, debug=True)
    res = Game(p, strat).run()
    labels = np.array([lab for (_, _, lab) in strat.det_log], dtype=np.uint8)
    assert (labels[:res.horizon] == res.states.states).all()


# --- per-configuration law of the main strategy ----------------------------

def test_main_per_config_pair_law():
    """Empirical P(pair | configuration) matches bias * safe-probability."""
    al, beta = 0.42, 0.12
    p = params(alpha=al, horizon=400_000, seed=21)
    strat = make_strategy("usm_main", p, beta=beta, debug=True)
    Game(p, strat).run()
    q = 1 - al
    p_safe = {"Z": al, "S*": 1.0}
    obs = defaultdict(lambda: [0, 0.0, 0])
    for (cfg, phi, label) in strat.det_log:
        kind, i = cfg
        if kind == "S" and i == 0:
            kind = "Z"
        if kind in p_safe:
            pred = phi * p_safe[kind]
        elif kind == "S":
            pred = phi * (1 - q ** (i + 1))
        elif kind == "P":
            pred = phi * (1 - (q ** i) * (1 + i * al))
        else:
            pred = phi * (1 - q ** i)
        o = obs[(kind, i)]
        o[0] += 1
        o[1] += pred
        o[2] += label
    for cfg, (n, pred_sum, npair) in obs.items():
        if n < 200:
            continue
        pred = pred_sum / n
        z = (npair / n - pred) / math.sqrt(pred * (1 - pred) / n)
        assert abs(z) < 4.5, (cfg, n, npair / n, pred, z)


def test_main_run_structure_multi_pair_runs_all_won():
    res = run_game(params(alpha=0.42, horizon=200_000, seed=9), "usm_main", beta=0.15)
    s = res.states.states.astype(bool)
    won = res.chain_creator == 1
    in_run = s & (np.roll(s, 1) | np.roll(s, -1))
    in_run[0] = in_run[-1] = False
    # every pair adjacent to another pair is won by the attacker
    assert won[in_run & s].all()


def test_main_solo_pair_win_rate_meets_bound():
    res = run_game(params(alpha=0.4, horizon=600_000, seed=10), "usm_main", beta=0.1)
    t = res.pair_tallies()
    bound = (2 * 0.4 - 0.16 - 0.1) / 0.9
    frac = t["solo_pairs_won"] / t["solo_pairs"]
    se = math.sqrt(bound * (1 - bound) / t["solo_pairs"])
    assert frac >= bound - 4 * se


def test_warmup_reward_formula():
    res = run_game(params(alpha=0.3, horizon=400_000, seed=11,
                          tiebreak="favor-attacker"), "usm_warmup", beta=0.25)
    se = math.sqrt(0.375 * 0.625 / res.horizon)
    assert abs(res.reward - 0.375) < 5 * se
    assert abs(res.pair_rate - 0.25) < 5 * math.sqrt(0.25 * 0.75 / res.horizon)


def test_warmup_wins_every_pair():
    res = run_game(params(alpha=0.35, horizon=100_000, seed=12,
                          tiebreak="favor-attacker"), "usm_warmup", beta=0.3)
    s = res.states.states.astype(bool)
    assert (res.chain_creator[s] == 1).all()


def test_general_degenerates_sensibly_without_forks():
    """With beta_prime = 0 the filter-driven labels are still i.i.d. at beta."""
    p = GameParams(alpha_prime=0.4, beta_prime=0.0, horizon_heights=200_000,
                   seed=13, tiebreak="against-attacker")
    res = run_game(p, "usm_general", beta=0.07, lead_cap=24)
    se = math.sqrt(0.07 * 0.93 / res.horizon)
    assert abs(res.pair_rate - 0.07) < 4 * se
    s = res.states.states
    d = s[1:][s[:-1] == 1].mean() - s[1:][s[:-1] == 0].mean()
    assert abs(d) < 6 * se * 4


def test_general_base_case_bias():
    p = GameParams(alpha_prime=0.4225, beta_prime=0.05, horizon_heights=100,
                   seed=0, tiebreak="against-attacker")
    strat = make_strategy("usm_general", p, beta=0.07, lead_cap=24)
    strat.reset(Game(p, strat))
    assert strat.bias == pytest.approx((0.07 - 0.05) / 0.4225)


def test_production_rate_alpha_one_plus_beta():
    res = run_game(params(alpha=0.4, horizon=400_000, seed=14), "usm_main", beta=0.1)
    blocks = res.horizon + res.pair_tallies()["pairs"]
    sd = math.sqrt(blocks * 0.4 * 0.6)
    assert abs(res.attacker_created - 0.4 * blocks) <= 3 * sd + 4


# --- short selfish mining ---------------------------------------------------

def short(outcomes, horizon, beta_prime=0.1, alpha=0.42, seed=0):
    ap = alpha * (1 + beta_prime) - beta_prime
    p = GameParams(alpha_prime=ap, beta_prime=beta_prime, horizon_heights=horizon,
                   seed=seed, tiebreak="against-attacker", record_view=True)
    g = Game(p, make_strategy("short_sm", p, debug=True),
             outcomes=np.asarray(outcomes, dtype=np.int8))
    return g.run(), g.strategy


def test_short_publishes_both_on_immediate_fork():
    res, strat = short([A, B, H, H, H, H, H], horizon=2)
    assert list(res.states.states) == [1, 0]
    assert res.chain_creator[0] == 1 and res.chain_creator[1] == 1
    assert strat.episode_log == [(2, 2)]


def test_short_behind_then_single_attacker_publishes_all():
    res, strat = short([A, H, A, H, H, H, H, H], horizon=2)
    # hidden at 1, honest at 1, attacker at 2: publish both, win both
    assert res.chain_creator[0] == 1 and res.chain_creator[1] == 1
    assert strat.episode_log == [(2, 2)]


def test_short_behind_then_single_honest_concedes():
    res, strat = short([A, H, H, H, H, H, H], horizon=2)
    assert res.chain_creator[0] == 2 and res.chain_creator[1] == 2
    assert list(res.states.states) == [0, 0]   # hidden block never broadcast
    assert strat.episode_log == [(0, 2)]


def test_short_behind_through_forks_counts_blocks():
    res, strat = short([A, H, B, B, A, H, H, H, H, H], horizon=4)
    # honest next, two level forks, then attacker: publish all five blocks
    assert strat.episode_log == [(4, 4)]
    assert (res.chain_creator[:4] == 1).all()


def test_short_lead_run_then_honest_cashes_out():
    res, strat = short([A, A, A, H, H, H, H, H, H], horizon=3)
    assert strat.episode_log == [(3, 3)]
    assert (res.chain_creator[:3] == 1).all()
