"""Exact reward of the against-tiebreak stealth strategy via its chain.

The chain transitions every time one more height's state becomes determined.
A state records how many hidden pair-labeled blocks the attacker holds and
whether the top hidden block is labeled Pair, Single, or still Undecided
(states ``0 = (0,S)``, ``(i,S)``, ``(i,P)``, ``(i,U)``).

Each transition carries six counters crediting, at the earliest moment a
win is implied, pairs / chain blocks / solo pairs to the honest side or the
attacker (H^p, S^p, H^b, S^b, H^s, S^s).  Chain blocks are credited exactly
once, so three independent counting schemes must reproduce the same reward;
their mutual agreement and the match against direct simulation are the
correctness gates for this module.

Leads above the truncation ``L`` redirect to ``L``, preserving stochasticity
and biasing conservatively; the stationary tail mass at the cap is reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

S, P, U = 0, 1, 2
_KIND_NAMES = {S: "S", P: "P", U: "U"}


@dataclass(frozen=True)
class MarkovState:
    kind: int
    lead: int

    def label(self) -> str:
        if self.kind == S and self.lead == 0:
            return "0"
        return f"{self.lead}{_KIND_NAMES[self.kind]}"


@dataclass
class Chain:
    """All transitions, columnar: src, dst, probability, reward counters, and
    the number of heights the transition determines."""

    alpha: float
    beta: float
    gamma: float
    lead_cap: int
    states: list[MarkovState]
    index: dict[tuple[int, int], int]
    src: np.ndarray
    dst: np.ndarray
    q: np.ndarray
    counters: np.ndarray       # columns: Hp, Sp, Hb, Sb, Hs, Ss
    heights: np.ndarray

    def row_sums(self) -> np.ndarray:
        sums = np.zeros(len(self.states))
        np.add.at(sums, self.src, self.q)
        return sums


def _p_safe(kind: int, i: int, alpha: float) -> float:
    ql = 1.0 - alpha
    if kind == S:
        return 1.0 - ql ** (i + 1)
    if kind == P:
        return 1.0 - ql ** (i + 1) - (i + 1) * alpha * ql ** i
    return 1.0 - ql ** i


def build_chain(alpha: float, beta: float, gamma: float = 0.0,
                lead_cap: int = 100) -> Chain:
    """Instantiate every transition for leads up to ``lead_cap``."""
    if not 0 < alpha < 1:
        raise ParameterError("alpha must be in (0,1)")
    if not 0 < beta <= alpha * alpha + 1e-12:
        raise ParameterError(f"beta outside (0, alpha^2={alpha*alpha:.6f}]")
    if not 0 <= gamma <= 1:
        raise ParameterError("gamma must lie in [0,1]")
    if lead_cap < 8:
        raise ParameterError("lead cap too small")

    L = lead_cap
    states: list[MarkovState] = []
    index: dict[tuple[int, int], int] = {}

    def add_state(kind: int, lead: int) -> int:
        key = (kind, lead)
        if key not in index:
            index[key] = len(states)
            states.append(MarkovState(kind, lead))
        return index[key]

    for i in range(0, L + 1):
        add_state(S, i)
    for i in range(1, L + 1):
        add_state(P, i)
    for i in range(2, L + 1):
        add_state(U, i)

    def clamp(kind: int, lead: int) -> int:
        return add_state(kind, min(lead, L))

    src, dst, q, ctr, hts = [], [], [], [], []

    def emit(s: int, d: int, prob: float, counters, heights: int) -> None:
        if prob <= 0.0:
            return
        src.append(s)
        dst.append(d)
        q.append(prob)
        ctr.append(counters)
        hts.append(heights)

    al = alpha
    ql = 1.0 - alpha
    g = gamma

    for i in range(0, L + 1):
        # from (i,S): i hidden pairs capped by Single-labeled blocks
        s0 = index[(S, i)]
        ph = _p_safe(S, i, al)
        emit(s0, index[(S, 0)], ql ** (i + 1), (0, 0, 1, 0, 0, 0), 1)
        for j in range(0, i + 1):
            w = (ql ** j) * al
            emit(s0, clamp(P, i - j + 1), w * (beta / ph), (0, 0, 0, 0, 0, 0), 1)
            emit(s0, index[(S, i - j)], w * (1 - beta / ph), (0, 0, 0, 1, 0, 0), 1)

    for i in range(1, L + 1):
        # from (i,P): the top pair block is an unextended run starter
        s0 = index[(P, i)]
        ph = _p_safe(P, i, al)
        emit(s0, index[(S, 0)], ql ** (i + 1),
             (1 - g, g, 2 - g, g, 1 - g, g), 1)                      # frontier race
        emit(s0, index[(S, 0)], (i + 1) * al * ql ** i,
             (0, 1, 0, 2, 0, 1), 1)                                  # pivotal cap wins
        for j in range(0, i):
            w = (j + 1) * al * al * ql ** j
            emit(s0, clamp(U, i + 1 - j), w * (beta / ph),
                 (0, 2, 0, 3, 0, 0), 1)
            emit(s0, clamp(P, i + 1 - j), w * (1 - beta / ph) * beta,
                 (0, 1, 0, 2, 0, 1), 2)
            emit(s0, index[(S, i - j)], w * (1 - beta / ph) * (1 - beta),
                 (0, 1, 0, 3, 0, 1), 2)

    for i in range(2, L + 1):
        # from (i,U): the undecided top resolves safe or pivotal
        s0 = index[(U, i)]
        ph = _p_safe(U, i, al)
        emit(s0, index[(S, 0)], ql ** i, (0, 0, 0, 0, 0, 0), 1)      # pivotal, precredited
        for j in range(0, i):
            w = (ql ** j) * al
            emit(s0, clamp(U, i + 1 - j), w * (beta / ph), (0, 1, 0, 1, 0, 0), 1)
            emit(s0, clamp(P, i + 1 - j), w * (1 - beta / ph) * beta,
                 (0, 0, 0, 0, 0, 0), 2)
            emit(s0, index[(S, i - j)], w * (1 - beta / ph) * (1 - beta),
                 (0, 0, 0, 1, 0, 0), 2)

    return Chain(alpha=alpha, beta=beta, gamma=gamma, lead_cap=L,
                 states=states, index=index,
                 src=np.asarray(src), dst=np.asarray(dst), q=np.asarray(q),
                 counters=np.asarray(ctr, dtype=float),
                 heights=np.asarray(hts, dtype=float))


def stationary_distribution(chain: Chain, tol: float = 1e-12) -> np.ndarray:
    """Stationary probabilities by direct linear solve, checked to ``tol``."""
    n = len(chain.states)
    rs = chain.row_sums()
    if np.abs(rs - 1.0).max() > 1e-9:
        raise ParameterError(f"chain not stochastic: worst row error "
                             f"{np.abs(rs - 1.0).max():.3e}")
    T = np.zeros((n, n))
    np.add.at(T, (chain.src, chain.dst), chain.q)
    A = T.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    p = np.linalg.solve(A, b)
    p = np.clip(p, 0.0, None)
    p /= p.sum()
    resid = np.abs(p @ T - p).max()
    if resid > max(tol, 1e-10):
        raise ParameterError(f"stationary solve residual {resid:.3e} above {tol}")
    return p


@dataclass
class ChainReward:
    block_ratio: float          # chain blocks won over chain blocks total
    pair_counting: float        # via the fraction of pairs won
    solo_pair: float            # via the fraction of solo pairs won
    pair_share: float
    solo_share: float
    heights_per_transition: float
    tail_mass: float
    audits: dict

    def values(self) -> tuple[float, float, float]:
        return self.block_ratio, self.pair_counting, self.solo_pair


def chain_reward(chain: Chain, dist: np.ndarray) -> ChainReward:
    """The three independent reward computations plus conservation audits."""
    pe = dist[chain.src] * chain.q
    hp, sp, hb, sb, hs, ss = (pe @ chain.counters[:, k] for k in range(6))
    heights = float(pe @ chain.heights)
    al, beta = chain.alpha, chain.beta

    block_ratio = sb / (hb + sb)
    pair_share = sp / (hp + sp)
    pair_counting = al - (1.0 - al - pair_share) * beta
    solo_share = ss / (hs + ss)
    delta3 = solo_share * (1 - beta) ** 2 + 2 * beta - beta * beta
    solo_pair = al - (1.0 - al - delta3) * beta

    tail = float(sum(dist[i] for i, st in enumerate(chain.states)
                     if st.lead >= chain.lead_cap))
    audits = {
        "blocks_per_height": (hb + sb) / heights,        # exactly 1
        "pairs_per_height": (hp + sp) / heights,         # exactly beta
        "solo_pairs_per_height": (hs + ss) / heights,    # beta (1-beta)^2
        "beta": beta,
        "solo_expected": beta * (1 - beta) ** 2,
    }
    return ChainReward(block_ratio=float(block_ratio),
                       pair_counting=float(pair_counting),
                       solo_pair=float(solo_pair),
                       pair_share=float(pair_share),
                       solo_share=float(solo_share),
                       heights_per_transition=heights,
                       tail_mass=tail, audits=audits)


def exact_reward(alpha: float, beta: float, gamma: float = 0.0,
                 lead_cap: int = 100, tol: float = 1e-12) -> ChainReward:
    chain = build_chain(alpha, beta, gamma, lead_cap)
    dist = stationary_distribution(chain, tol)
    return chain_reward(chain, dist)
