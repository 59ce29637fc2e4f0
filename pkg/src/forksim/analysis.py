"""Closed-form rewards, thresholds, and the natural-fork sufficient condition.

These are the numeric ground truths the simulator is cross-checked against.
Everything here is a pure function of the scalar inputs.
"""

from __future__ import annotations

import math

from .errors import ParameterError


def warmup_reward(alpha: float, beta: float) -> float:
    """Reward of the favor-tiebreak stealth strategy: alpha + alpha*beta."""
    if not 0 < alpha < 1:
        raise ParameterError("alpha must be in (0,1)")
    if not 0 <= beta <= alpha + 1e-12:
        raise ParameterError("valid range is beta <= alpha")
    return alpha + alpha * beta


def pair_reward(alpha: float, beta: float, delta: float) -> float:
    """Chain share of a strategy winning a ``delta`` fraction of pairs when a
    ``beta`` fraction of heights are pairs: alpha - (1-alpha-delta) * beta."""
    for v in (alpha, beta, delta):
        if not 0 <= v <= 1:
            raise ParameterError("inputs must lie in [0,1]")
    return alpha - (1.0 - alpha - delta) * beta


def solo_pair_lower_bound(alpha: float, beta: float) -> float:
    """Guaranteed fraction of solo pairs the stealth miner wins:
    (2a - a^2 - b) / (1 - b)."""
    return (2 * alpha - alpha * alpha - beta) / (1.0 - beta)


def pairs_won_fraction(w: float, beta: float) -> float:
    """Total pair-win fraction from the solo-pair win fraction ``w``:
    w (1-b)^2 + 2b - b^2.

    Every maximal run of two or more consecutive pairs is fully won, and a
    (1-b)^2 fraction of pairs are solo; at w = 1 this is identically 1.
    """
    return w * (1.0 - beta) ** 2 + 2.0 * beta - beta * beta


def main_threshold(beta: float) -> float:
    """Profitability bound for the against-tiebreak stealth strategy:
    alpha > (3 - 2b - sqrt(5 - 4b)) / (2 (1-b)); decreasing in beta."""
    if not 0 <= beta < 1:
        raise ParameterError("beta must lie in [0,1)")
    return (3.0 - 2.0 * beta - math.sqrt(5.0 - 4.0 * beta)) / (2.0 * (1.0 - beta))


def alpha_star(tol: float = 1e-12) -> float:
    """Unique root in (0,1) of a^4 - 2a^3 + 3a - 1, bisection + Newton."""

    def f(a: float) -> float:
        return ((a - 2.0) * a * a * a) + 3.0 * a - 1.0

    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if f(lo) * f(mid) <= 0:
            hi = mid
        else:
            lo = mid
    x = 0.5 * (lo + hi)
    for _ in range(30):
        d = 4 * x ** 3 - 6 * x ** 2 + 3
        step = f(x) / d
        x -= step
        if abs(step) < tol:
            break
    return x


def sm_threshold(gamma: float) -> float:
    """Classic withholding profitability bound: (1-g) / (3-2g)."""
    if not 0 <= gamma <= 1:
        raise ParameterError("gamma must lie in [0,1]")
    return (1.0 - gamma) / (3.0 - 2.0 * gamma)


def alpha_prime_of(alpha: float, beta_prime: float) -> float:
    """Attacker-only round rate from hashrate share and natural pair rate."""
    return alpha * (1.0 + beta_prime) - beta_prime


def _check_general_domain(alpha: float, beta_prime: float) -> float:
    ap = alpha_prime_of(alpha, beta_prime)
    if ap < 0:
        raise ParameterError(
            f"alpha'={ap:.6f} negative: beta'={beta_prime} not reachable at alpha={alpha}")
    if 1.0 - ap - beta_prime <= 0:
        raise ParameterError("honest-only rate vanished; singular denominators")
    if beta_prime >= 1:
        raise ParameterError("beta_prime must be < 1")
    return ap


def honest_reward_general(alpha: float, beta_prime: float) -> float:
    """The stated honest benchmark in the natural-fork model:
    (alpha - b' + a' b' / (1 - a' - b')) / (1 - b').

    Note: honest-vs-honest simulation with the against tiebreak converges to
    :func:`honest_chain_share` instead, which differs for beta_prime > 0; the
    discrepancy is flagged in the test suite, not silently patched.
    """
    ap = _check_general_domain(alpha, beta_prime)
    return (alpha - beta_prime + ap * beta_prime / (1.0 - ap - beta_prime)) / (1.0 - beta_prime)


def honest_chain_share(alpha: float, beta_prime: float) -> float:
    """Chain share a longest-chain player actually earns with natural forks at
    rate b' while losing every tie: a' / (1 - b').

    Each pair resolves by the first non-fork round, so the attacker wins a
    pair with probability a' / (1 - b'); singles contribute a' directly.
    """
    ap = _check_general_domain(alpha, beta_prime)
    return ap / (1.0 - beta_prime)


def _condition_brackets(alpha: float, beta_prime: float) -> tuple[float, float]:
    ap = _check_general_domain(alpha, beta_prime)
    bp = beta_prime
    b1 = ((2 - bp) * (1 - ap - bp) * ap / (1 - bp) ** 2 + 2 * bp
          + (2 + bp - ap) * ap / (1 - ap))
    b2 = ((2 - bp) * (1 - ap - bp) / (1 - bp) + 2 * bp
          + (2 + bp - ap) * ap / (1 - ap))
    return b1, b2


def condition_coefficient(alpha: float, beta_prime: float) -> float:
    """The (a' - a'^2) / (1 - a' - b') multiplier of the second bracket."""
    ap = _check_general_domain(alpha, beta_prime)
    return (ap - ap * ap) / (1.0 - ap - beta_prime)


def general_condition(alpha: float, beta_prime: float) -> float:
    """Signed left-hand side of the natural-fork sufficient condition, with
    the coefficient (a' - a'^2)/(1 - a' - b') exactly as displayed;
    nonnegative means profitable by that condition."""
    b1, b2 = _condition_brackets(alpha, beta_prime)
    return (b1 - 1.0) - condition_coefficient(alpha, beta_prime) * (b2 - 1.0)


def general_condition_vs_honest(alpha: float, beta_prime: float) -> float:
    """Same two brackets charged at the simulated honest chain share
    a'/(1-b').  With this benchmark the condition holds for every reachable
    beta_prime exactly when alpha >= (3 - sqrt 5)/2, recovering the fork-free
    threshold with no gap."""
    b1, b2 = _condition_brackets(alpha, beta_prime)
    x = honest_chain_share(alpha, beta_prime)
    return (b1 - 1.0) - x * (b2 - 1.0)


def short_sm_expected_reward(alpha: float, beta_prime: float, lam: float) -> float:
    """Expected episode value of the cash-out-early strategy when each chain
    block costs ``lam`` and each own chain block pays 1: B1 - lam * B2."""
    b1, b2 = _condition_brackets(alpha, beta_prime)
    return b1 - lam * b2


def max_beta_prime(alpha: float) -> float:
    """Largest natural pair rate reachable by a two-player game at hashrate
    share alpha: the attacker-only rate hits zero at alpha/(1-alpha)."""
    if not 0 < alpha < 1:
        raise ParameterError("alpha must be in (0,1)")
    return alpha / (1.0 - alpha)
