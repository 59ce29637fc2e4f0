import math

import numpy as np
import pytest

from forksim import analysis
from forksim.engine import GameParams, run_game
from forksim.errors import ParameterError

GOLDEN = (3 - math.sqrt(5)) / 2


def test_warmup_reward_values():
    assert analysis.warmup_reward(0.3, 0.25) == pytest.approx(0.375)
    assert analysis.warmup_reward(0.37, 0.0) == pytest.approx(0.37)
    assert analysis.warmup_reward(0.4, 0.4) == pytest.approx(0.56)
    with pytest.raises(ParameterError):
        analysis.warmup_reward(0.3, 0.35)


def test_pair_reward_values():
    a, b = 0.37, 0.2
    assert analysis.pair_reward(a, b, 1 - a) == pytest.approx(a)
    assert analysis.pair_reward(a, b, 1.0) == pytest.approx(a + a * b)
    assert analysis.pair_reward(a, 0.0, 0.3) == pytest.approx(a)


def test_pair_reward_sign_iff_majority_of_pairs():
    for a in np.linspace(0.1, 0.45, 8):
        for b in (0.01, 0.1, 0.3):
            for d in np.linspace(0, 1, 11):
                gain = analysis.pair_reward(a, b, d) - a
                if abs(d - (1 - a)) < 1e-12:
                    continue
                assert (gain > 0) == (d > 1 - a)


def test_solo_pair_lower_bound_values():
    assert analysis.solo_pair_lower_bound(0.4, 0.1) == pytest.approx(0.6)
    assert analysis.solo_pair_lower_bound(0.4, 0.0) == pytest.approx(0.64)


def test_pairs_won_fraction_values():
    for b in np.linspace(0, 0.9, 10):
        assert analysis.pairs_won_fraction(1.0, b) == pytest.approx(1.0)
    assert analysis.pairs_won_fraction(0.0, 0.5) == pytest.approx(0.75)
    assert analysis.pairs_won_fraction(0.3, 0.0) == pytest.approx(0.3)


def test_pairs_won_compact_variant_fails_certainty_bound():
    """The compact variant w + (2-w)b - (1-w)b^2 disagrees with the expansion
    of the run-length derivation and exceeds 1 at w=1; kept here as the
    documented discrepancy, with the derivation form implemented."""
    for b in (0.1, 0.3, 0.5):
        compact = 1 + (2 - 1) * b - (1 - 1) * b * b
        assert compact == pytest.approx(1 + b)          # > 1: impossible share
        assert analysis.pairs_won_fraction(1.0, b) == pytest.approx(1.0)
        w = 0.4
        expanded = w + (2 - 2 * w) * b - (1 - w) * b * b
        assert analysis.pairs_won_fraction(w, b) == pytest.approx(expanded)


def test_main_threshold_values():
    assert analysis.main_threshold(0.0) == pytest.approx(GOLDEN, abs=1e-12)
    assert analysis.main_threshold(0.25) == pytest.approx(1 / 3)
    grid = [analysis.main_threshold(b) for b in np.linspace(0, 0.99, 100)]
    assert all(x > y for x, y in zip(grid, grid[1:]))
    with pytest.raises(ParameterError):
        analysis.main_threshold(1.0)


def test_alpha_star_root():
    r = analysis.alpha_star()
    assert abs(r ** 4 - 2 * r ** 3 + 3 * r - 1) < 1e-9
    assert 0.358 < r < 0.359
    f = lambda a: a ** 4 - 2 * a ** 3 + 3 * a - 1
    assert f(0.3) * f(0.4) < 0
    assert r < GOLDEN


def test_sm_threshold_values():
    assert analysis.sm_threshold(0.0) == 1 / 3
    assert analysis.sm_threshold(1.0) == 0.0
    assert analysis.sm_threshold(0.5) == pytest.approx(0.25)


def test_honest_reward_general_formula_values():
    assert analysis.honest_reward_general(0.4, 0.0) == pytest.approx(0.4)
    assert analysis.honest_reward_general(0.4, 0.2) == pytest.approx(0.384615, abs=1e-6)
    assert analysis.alpha_prime_of(0.5, 0.2) == pytest.approx(0.4)
    with pytest.raises(ParameterError):
        analysis.honest_reward_general(0.3, 0.9)


def test_honest_benchmark_discrepancy_documented():
    """The stated benchmark formula disagrees with both the condition's own
    coefficient and the simulated honest chain share at beta' > 0; all three
    coincide at beta' = 0.  Flagged here, not silently patched."""
    a, bp = 0.4, 0.2
    stated = analysis.honest_reward_general(a, bp)
    coeff = analysis.condition_coefficient(a, bp)
    simval = analysis.honest_chain_share(a, bp)
    assert stated == pytest.approx(0.3846153846, abs=1e-9)
    assert coeff == pytest.approx(0.3876923077, abs=1e-9)
    assert simval == pytest.approx(0.35, abs=1e-12)
    assert abs(stated - coeff) > 1e-3 and abs(stated - simval) > 1e-2
    for f in (analysis.honest_reward_general, analysis.condition_coefficient,
              analysis.honest_chain_share):
        assert f(a, 0.0) == pytest.approx(a)
    # the simulation agrees with the chain-share value
    ap = analysis.alpha_prime_of(a, bp)
    p = GameParams(alpha_prime=ap, beta_prime=bp, horizon_heights=400_000,
                   seed=5, tiebreak="against-attacker")
    r = run_game(p, "honest")
    se = math.sqrt(simval * (1 - simval) / r.horizon) * 2
    assert abs(r.reward - simval) < 4 * se
    assert abs(r.reward - stated) > 10 * se


def test_general_condition_recovers_forkfree_threshold():
    lo, hi = 0.30, 0.45
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if analysis.general_condition(mid, 0.0) < 0:
            lo = mid
        else:
            hi = mid
    assert abs(0.5 * (lo + hi) - GOLDEN) < 1e-6


def test_general_condition_single_sign_change_at_zero_forks():
    grid = np.linspace(0.05, 0.5, 400)
    signs = np.sign([analysis.general_condition(a, 0.0) for a in grid])
    changes = int((np.diff(signs) != 0).sum())
    assert changes == 1


def test_condition_identity_with_its_own_coefficient():
    rng = np.random.default_rng(11)
    for _ in range(100):
        a = rng.uniform(0.05, 0.49)
        b = rng.uniform(0.0, analysis.max_beta_prime(a) * 0.98)
        lam = analysis.condition_coefficient(a, b)
        lhs = analysis.general_condition(a, b)
        rhs = analysis.short_sm_expected_reward(a, b, lam) - (1 - lam)
        assert abs(lhs - rhs) < 1e-9


def test_condition_with_honest_benchmark_threshold_is_golden():
    # minimum over reachable fork rates sits at beta'=0, so the all-rates
    # threshold coincides with the fork-free one
    for a, positive in ((GOLDEN + 1e-4, True), (GOLDEN - 1e-3, False)):
        grid = np.linspace(0, analysis.max_beta_prime(a), 200)[:-1]
        vals = [analysis.general_condition_vs_honest(a, b) for b in grid]
        assert (min(vals) >= 0) == positive


def test_displayed_coefficient_dip_is_flagged():
    grid = np.linspace(0, analysis.max_beta_prime(0.382), 500)[:-1]
    vals = [analysis.general_condition(0.382, b) for b in grid]
    assert min(vals) < -1e-3   # known inconsistency of the displayed form


def test_short_sm_value_above_threshold():
    a, bp = 0.45, 0.0
    x = analysis.honest_reward_general(a, bp)
    assert analysis.short_sm_expected_reward(a, bp, x) > 1 - x


def test_general_condition_domain_errors():
    with pytest.raises(ParameterError):
        analysis.general_condition(0.382, 0.63)   # negative attacker-only rate
