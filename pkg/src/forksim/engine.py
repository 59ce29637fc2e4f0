"""Round-outcome sampling and the game loop.

The game advances in discrete rounds.  Each round a conditioned coin decides
whether only the attacker, only the honest side, or both produce a block
(``HONEST_ONLY`` / ``ATTACKER_ONLY`` / ``BOTH``); empty rounds are never
simulated because the conditioned distribution already excludes them.

The loop maintains the two competing branches above the highest commonly
agreed block.  Contested heights (one public block from each side) are pairs;
they resolve in batches whenever one branch becomes strictly longer and the
other side adopts it.  Per-height statistics go straight into preallocated
arrays so runs of 10^7 finalized heights stay affordable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ParameterError, ProtocolViolationError
from .model import (AGAINST_ATTACKER, ATTACKER, FAVOR_ATTACKER, Block,
                    StateSequence, View)

HONEST_ONLY = 0
ATTACKER_ONLY = 1
BOTH = 2

_CHUNK = 1 << 15


@dataclass(frozen=True)
class RoundDistribution:
    """Per-round outcome law: attacker-only / both / honest-only."""

    alpha_prime: float
    beta_prime: float

    def __post_init__(self) -> None:
        if self.alpha_prime < 0 or self.beta_prime < 0:
            raise ParameterError("round probabilities must be nonnegative")
        if self.alpha_prime + self.beta_prime > 1 + 1e-12:
            raise ParameterError("alpha_prime + beta_prime exceeds 1")

    @property
    def honest_only(self) -> float:
        return 1.0 - self.alpha_prime - self.beta_prime

    @property
    def block_share(self) -> float:
        """Attacker's share of all created blocks, (a' + b') / (1 + b')."""
        return (self.alpha_prime + self.beta_prime) / (1.0 + self.beta_prime)


def reduce_hashrates(hashrates: Sequence[float], latency: float) -> tuple[float, float]:
    """Collapse miners 2..n into one effective honest miner.

    Returns (attacker rate, honest effective rate); the latency-0 limit is the
    plain sum of the honest rates.
    """
    rates = [float(h) for h in hashrates]
    if len(rates) < 2 or any(r <= 0 for r in rates):
        raise ParameterError("need at least two positive hashrates")
    if latency == 0.0:
        return rates[0], sum(rates[1:])
    if latency < 0 or latency > min(1.0 / r for r in rates) + 1e-12:
        raise ParameterError(f"latency {latency} outside (0, 1/max_rate]")
    prod = 1.0
    for r in rates[1:]:
        prod *= 1.0 - r * latency
    return rates[0], (1.0 - prod) / latency


def round_distribution(hashrates: Sequence[float], latency: float) -> RoundDistribution:
    """Outcome-class law from per-miner coins conditioned on at least one heads."""
    rates = [float(h) for h in hashrates]
    if any(r <= 0 for r in rates):
        raise ParameterError("hashrates must be positive")
    if latency == 0.0:
        total = sum(rates)
        return RoundDistribution(rates[0] / total, 0.0)
    if latency < 0 or latency > min(1.0 / r for r in rates) + 1e-12:
        raise ParameterError(f"latency {latency} outside (0, 1/max_rate]")
    p1 = rates[0] * latency
    prod_rest = 1.0
    for r in rates[1:]:
        prod_rest *= 1.0 - r * latency
    p_none = (1.0 - p1) * prod_rest
    norm = 1.0 - p_none
    return RoundDistribution(p1 * prod_rest / norm, p1 * (1.0 - prod_rest) / norm)


def target_latency(alpha: float, beta: float) -> float:
    """Latency whose two-player pair rate equals ``beta``.

    Inverts beta = a(1-a) l^2 / (1 - a(1-a) l^2); the round trip back through
    that same expression is exact.
    """
    if not 0 < alpha < 1:
        raise ParameterError("alpha must be in (0,1)")
    if beta < 0:
        raise ParameterError("beta must be nonnegative")
    if beta == 0.0:
        return 0.0
    x = beta / (1.0 + beta)
    ell = math.sqrt(x / (alpha * (1.0 - alpha)))
    if ell > 1.0 / max(alpha, 1.0 - alpha) + 1e-12:
        raise ParameterError(f"pair rate {beta} not attainable at alpha={alpha}")
    return ell


def pair_rate_at_latency(alpha: float, ell: float) -> float:
    """Forward direction of :func:`target_latency`."""
    x = alpha * (1.0 - alpha) * ell * ell
    return x / (1.0 - x)


# ---------------------------------------------------------------------------


def _gamma_from_tiebreak(rule) -> float:
    if isinstance(rule, str):
        if rule == FAVOR_ATTACKER:
            return 1.0
        if rule == AGAINST_ATTACKER:
            return 0.0
        raise ParameterError(f"unknown tiebreak rule {rule!r}")
    g = float(rule)
    if not 0.0 <= g <= 1.0:
        raise ParameterError("gamma must lie in [0,1]")
    return g


@dataclass
class GameParams:
    """Reproducible description of one run.

    Give either ``alpha`` (+ optional ``latency``) or ``alpha_prime`` /
    ``beta_prime`` directly.  ``tiebreak`` is a rule name or a tie-win
    probability gamma in [0,1] (0 = against the attacker, 1 = in favor).
    """

    alpha: Optional[float] = None
    latency: float = 0.0
    alpha_prime: Optional[float] = None
    beta_prime: Optional[float] = None
    horizon_heights: int = 10_000
    seed: int = 0
    tiebreak: object = AGAINST_ATTACKER
    record_view: bool = False
    record_rounds: bool = False
    max_rounds: Optional[int] = None

    def distribution(self) -> RoundDistribution:
        if self.alpha_prime is not None:
            if self.beta_prime is None:
                raise ParameterError("alpha_prime given without beta_prime")
            return RoundDistribution(self.alpha_prime, self.beta_prime)
        if self.alpha is None:
            raise ParameterError("need alpha or (alpha_prime, beta_prime)")
        if not 0 < self.alpha < 1:
            raise ParameterError("alpha must be in (0,1)")
        return round_distribution([self.alpha, 1.0 - self.alpha], self.latency)

    @property
    def gamma(self) -> float:
        return _gamma_from_tiebreak(self.tiebreak)


@dataclass
class GameResult:
    """Outputs of one finished run, truncated to the finalized horizon."""

    params: GameParams
    strategy: str
    states: StateSequence                     # per height 1..H
    chain_creator: np.ndarray                 # uint8, 1 = attacker, 2 = honest side
    rounds_used: int
    attacker_created: int                     # blocks created at heights <= H
    view: Optional[View] = None
    t_first: Optional[np.ndarray] = None      # first-creation round per height
    truncation_eps: float = 0.0               # belief truncation mass, if any

    @property
    def horizon(self) -> int:
        return len(self.states)

    @property
    def reward(self) -> float:
        return float(np.mean(self.chain_creator == ATTACKER))

    @property
    def pair_rate(self) -> float:
        return float(np.mean(self.states.states))

    def pair_tallies(self) -> dict:
        """Total / attacker-won pairs, plus the solo-pair split."""
        s = self.states.states.astype(bool)
        won = s & (self.chain_creator == ATTACKER)
        solo = np.zeros_like(s)
        if len(s) > 2:
            solo[1:-1] = s[1:-1] & ~s[:-2] & ~s[2:]
        return {
            "pairs": int(s.sum()),
            "pairs_won": int(won.sum()),
            "solo_pairs": int(solo.sum()),
            "solo_pairs_won": int((solo & won).sum()),
        }

    def audit(self) -> dict:
        """Conservation checks computed from the recorded arrays."""
        t = self.pair_tallies()
        H = self.horizon
        return {
            "heights": H,
            "blocks_at_heights": H + t["pairs"],
            "attacker_created": self.attacker_created,
            "pair_rate": self.pair_rate,
        }

    def summary(self) -> dict:
        t = self.pair_tallies()
        dist = self.params.distribution()
        return {
            "seed": self.params.seed,
            "strategy": self.strategy,
            "alpha": round(dist.block_share, 12),
            "beta": round(self.pair_rate, 8),
            "reward": self.reward,
            "pair_rate": self.pair_rate,
            "pairs_won_fraction": t["pairs_won"] / t["pairs"] if t["pairs"] else math.nan,
            "solo_pairs_won_fraction": (t["solo_pairs_won"] / t["solo_pairs"]
                                        if t["solo_pairs"] else math.nan),
            "truncation_eps": self.truncation_eps,
        }


class OutcomeStream:
    """Chunked sampler of round outcomes from one Philox substream."""

    def __init__(self, dist: RoundDistribution, seed: int,
                 fixed: Optional[np.ndarray] = None):
        self.dist = dist
        self._fixed = None if fixed is None else np.asarray(fixed, dtype=np.int8)
        self._gen = np.random.Generator(np.random.Philox(key=seed))
        self._buf = np.empty(0, dtype=np.int8)
        self._pos = 0
        self.drawn = 0

    def _refill(self) -> None:
        u = self._gen.random(_CHUNK)
        a, b = self.dist.alpha_prime, self.dist.beta_prime
        out = np.zeros(_CHUNK, dtype=np.int8)
        out[u < a] = ATTACKER_ONLY
        out[(u >= a) & (u < a + b)] = BOTH
        self._buf = out
        self._pos = 0

    def next(self) -> int:
        if self._fixed is not None:
            if self.drawn >= len(self._fixed):
                raise ParameterError("fixed outcome stream exhausted")
            o = int(self._fixed[self.drawn])
            self.drawn += 1
            return o
        if self._pos >= len(self._buf):
            self._refill()
        o = int(self._buf[self._pos])
        self._pos += 1
        self.drawn += 1
        return o


class CoinStream:
    """Uniforms for strategy and tie decisions, disjoint from outcome draws."""

    def __init__(self, seed: int):
        self._gen = np.random.Generator(np.random.Philox(key=seed).jumped(1))
        self._buf = np.empty(0)
        self._pos = 0

    def uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(_CHUNK)
            self._pos = 0
        u = float(self._buf[self._pos])
        self._pos += 1
        return u

    def bernoulli(self, p: float) -> bool:
        if not -1e-9 <= p <= 1 + 1e-9:
            raise ParameterError(f"coin bias {p} outside [0,1]")
        return self.uniform() < p


class Recorder:
    """Materializes blocks for the optional View output.

    ``honest_multiplicity`` maps a round to the honest miner ids that produced
    a block that round; it serves the n-player reduction check.  All parallel
    honest blocks share one parent and the lowest miner id leads the chain.
    """

    def __init__(self, honest_multiplicity=None):
        self.rows: list[list] = []        # id, creator, parent, height, created, broadcast
        self._next_id = 1
        self.honest_multiplicity = honest_multiplicity

    def create(self, creator: int, parent_id: int, height: int, t: int,
               broadcast: bool) -> int:
        bid = self._next_id
        self._next_id += 1
        self.rows.append([bid, creator, parent_id, height, t, t if broadcast else None])
        return bid

    def broadcast(self, bid: int, t: int) -> None:
        self.rows[bid - 1][5] = t

    def create_honest(self, parent_id: int, height: int, t: int) -> int:
        if self.honest_multiplicity is None:
            return self.create(2, parent_id, height, t, broadcast=True)
        miners = sorted(self.honest_multiplicity(t))
        first = None
        for m in miners:
            bid = self.create(m, parent_id, height, t, broadcast=True)
            if first is None:
                first = bid
        return first

    def build_view(self) -> View:
        view = View()
        for bid, creator, parent, height, created, bcast in self.rows:
            if bcast is None:
                continue   # withheld forever: not part of the view
            view.add(Block(id=bid, creator=creator, parent=parent, height=height,
                           created_round=created, broadcast_round=bcast))
        return view


class Game:
    """Mutable state of one two-player run driving one attacker strategy.

    Strategies interact through :meth:`broadcast_own` / :meth:`abandon_hidden`
    and the read-only attributes; everything else is engine-internal.
    """

    def __init__(self, params: GameParams, strategy,
                 outcomes: Optional[np.ndarray] = None,
                 recorder: Optional[Recorder] = None):
        self.params = params
        self.dist = params.distribution()
        self.gamma = params.gamma
        self.strategy = strategy
        self.outcomes = OutcomeStream(self.dist, params.seed, fixed=outcomes)
        self.coins = CoinStream(params.seed)
        self.recorder = recorder if recorder is not None else (
            Recorder() if params.record_view else None)

        H = params.horizon_heights
        self._cap = H + max(256, H // 4)
        self.state_arr = np.zeros(self._cap + 2, dtype=np.uint8)
        self.creator_arr = np.zeros(self._cap + 2, dtype=np.uint8)
        self.attacker_made = np.zeros(self._cap + 2, dtype=bool)
        self.t_first = (np.zeros(self._cap + 2, dtype=np.int64)
                        if (params.record_rounds or params.record_view) else None)

        self.t = 0
        self.agreed = 0                    # common-prefix height
        self.hz = 0                        # honest branch top
        self.a_pub = 0                     # attacker public branch top
        self.a_priv = 0                    # attacker private tip (>= a_pub)
        self.max_height = 0
        self.hidden: list[list] = []       # [height, block_id], bottom-up
        self._h_tip_id = 0
        self._a_tip_id = 0
        self._a_pub_tip_id = 0

    # -- primitives available to strategies --------------------------------

    def broadcast_own(self, height: int) -> None:
        """Release the attacker's lowest hidden block, which must sit at
        ``height``; releases are bottom-up so a child is never public before
        its parent."""
        if not self.hidden or self.hidden[0][0] != height:
            raise ProtocolViolationError(
                f"no releasable attacker block at height {height}")
        if height != self.a_pub + 1:
            raise ProtocolViolationError(
                f"release at {height} would precede its parent at {self.a_pub}")
        _, bid = self.hidden.pop(0)
        self.a_pub = height
        if height <= self.hz:
            self.state_arr[height] = 1      # contested height: a pair in the view
        if self.recorder is not None and bid:
            self.recorder.broadcast(bid, self.t)
            self._a_pub_tip_id = bid

    def abandon_hidden(self) -> None:
        """Give up every withheld block; they never enter the view."""
        self.hidden.clear()
        self.a_priv = self.a_pub

    @property
    def tie_live(self) -> bool:
        """A contested frontier the honest side may switch onto (gamma)."""
        return self.a_pub == self.hz and self.hz > self.agreed

    # -- internal mechanics -------------------------------------------------

    def _new_height(self, h: int) -> None:
        if h > self.max_height:
            if h >= self._cap:
                raise ParameterError("branch grew past the horizon margin")
            self.max_height = h
            if self.t_first is not None:
                self.t_first[h] = self.t

    def _resolve(self, winner_attacker: bool, upto: int) -> None:
        if upto <= self.agreed:
            return
        self.creator_arr[self.agreed + 1: upto + 1] = 1 if winner_attacker else 2
        self.agreed = upto
        if winner_attacker:
            self.hz = upto
            self._h_tip_id = self._a_pub_tip_id
        else:
            self.a_pub = upto
            if not self.hidden:
                self.a_priv = upto
                self._a_tip_id = self._h_tip_id
                self._a_pub_tip_id = self._h_tip_id

    def _honest_mines(self) -> int:
        # tie preference is exercised when the honest side next extends
        if self.tie_live and self.gamma > 0.0 and not (
                self.gamma < 1.0 and not self.coins.bernoulli(self.gamma)):
            self._resolve(True, self.hz)
        h = self.hz + 1
        self.hz = h
        self._new_height(h)
        if self.recorder is not None:
            bid = self.recorder.create_honest(self._h_tip_id, h, self.t)
            self._h_tip_id = bid
        return h

    def _attacker_mines(self) -> int:
        h = self.a_priv + 1
        self.a_priv = h
        self._new_height(h)
        self.attacker_made[h] = True
        bid = 0
        if self.recorder is not None:
            bid = self.recorder.create(ATTACKER, self._a_tip_id, h, self.t,
                                       broadcast=False)
            self._a_tip_id = bid
        self.hidden.append([h, bid])
        return h

    def run(self) -> GameResult:
        params = self.params
        H = params.horizon_heights
        max_rounds = params.max_rounds or max(400, H * 6 + 4000)
        self.strategy.reset(self)
        step = self.strategy.step
        nxt = self.outcomes.next
        while self.agreed < H + 2:
            if self.t >= max_rounds:
                raise ParameterError(
                    f"run did not finalize {H} heights within {max_rounds} rounds")
            self.t += 1
            o = nxt()
            hb = self._honest_mines() if o != ATTACKER_ONLY else None
            ab = self._attacker_mines() if o != HONEST_ONLY else None
            step(o, hb, ab)
            if self.a_pub > self.hz:
                self._resolve(True, self.a_pub)
            elif self.hz > self.a_pub and not self.hidden:
                self._resolve(False, self.hz)
        return self._finish()

    def _finish(self) -> GameResult:
        H = self.params.horizon_heights
        states = StateSequence(self.state_arr[1:H + 1].copy())
        creators = self.creator_arr[1:H + 1].copy()
        made = int(self.attacker_made[1:H + 1].sum())
        view = None
        if self.recorder is not None and self.recorder.honest_multiplicity is None:
            view = self.recorder.build_view()
        t_first = self.t_first[1:H + 1].copy() if self.t_first is not None else None
        eps = float(getattr(self.strategy, "truncation_eps", 0.0))
        return GameResult(params=self.params, strategy=self.strategy.name,
                          states=states, chain_creator=creators,
                          rounds_used=self.t, attacker_created=made, view=view,
                          t_first=t_first, truncation_eps=eps)


def run_game(params: GameParams, attacker, **strategy_kwargs) -> GameResult:
    """Run one seeded game of ``params.horizon_heights`` finalized heights.

    ``attacker`` is a strategy instance or a registry name.  Deterministic:
    identical params and seed give an identical result.
    """
    from .strategies import make_strategy
    if isinstance(attacker, str):
        attacker = make_strategy(attacker, params, **strategy_kwargs)
    return Game(params, attacker).run()


# ---------------------------------------------------------------------------
# n-player reduction check


@dataclass
class CoupleReport:
    seeds: list[int]
    rewards_equal: bool
    views_isomorphic: bool
    first_divergence: Optional[int] = None    # 1-based round, mismatched streams
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.rewards_equal and self.views_isomorphic and self.first_divergence is None


def _coupled_streams(hashrates: Sequence[float], latency: float, seed: int,
                     n_rounds: int, wrong_honest_rate: Optional[float] = None):
    """Round classes for the n-player game and, coupled through the same
    uniforms, for a two-player game with the given effective honest rate.

    Returns (classes, classes_other, honest_marks) where ``honest_marks``
    lists the honest miners with a block in each kept round.
    """
    rates = np.asarray(hashrates, dtype=float)
    p = rates * latency
    if np.any(p > 1) or np.any(p <= 0):
        raise ParameterError("per-miner head probabilities must be in (0,1]")
    p1 = p[0]
    p_any = 1.0 - np.prod(1.0 - p[1:])
    p_eff = p_any if wrong_honest_rate is None else wrong_honest_rate * latency
    gen = np.random.Generator(np.random.Philox(key=seed))
    gen_marks = np.random.Generator(np.random.Philox(key=seed).jumped(2))

    classes = np.empty(0, dtype=np.int8)
    classes_other = np.empty(0, dtype=np.int8)
    marks: list[tuple[int, ...]] = []
    while len(classes) < n_rounds:
        u = gen.random((n_rounds, 2))
        att = u[:, 0] < p1
        hon = u[:, 1] < p_any
        hon_other = u[:, 1] < p_eff
        keep = att | hon
        cls = np.where(att & hon, BOTH, np.where(att, ATTACKER_ONLY, HONEST_ONLY))
        cls_o = np.where(att & hon_other, BOTH,
                         np.where(att, ATTACKER_ONLY, HONEST_ONLY)).astype(np.int8)
        cls_o[~att & ~hon_other] = -1       # empty round in the mismatched game
        classes = np.concatenate([classes, cls[keep].astype(np.int8)])
        classes_other = np.concatenate([classes_other, cls_o[keep]])
        for flag in hon[keep]:
            if flag:
                while True:
                    heads = gen_marks.random(len(p) - 1) < p[1:]
                    if heads.any():
                        break
                marks.append(tuple(int(i) + 2 for i in np.flatnonzero(heads)))
            else:
                marks.append(())
    return classes[:n_rounds], classes_other[:n_rounds], marks[:n_rounds]


def _view_signature(view: View) -> list[tuple]:
    """Canonical per-height signature; parallel honest blocks created in the
    same round collapse because creators reduce to the A/H partition."""
    sig: dict[int, set] = {}
    for b in view.blocks.values():
        if b.height == 0:
            continue
        side = "A" if b.creator == ATTACKER else "H"
        parent_h = view.blocks[b.parent].height
        sig.setdefault(b.height, set()).add(
            (side, parent_h, b.created_round, b.broadcast_round))
    return [tuple(sorted(sig[h])) for h in sorted(sig)]


def couple_check(hashrates: Sequence[float], latency: float, strategy_name: str,
                 seeds: Sequence[int], horizon_heights: int = 2000,
                 tiebreak=AGAINST_ATTACKER,
                 wrong_honest_rate: Optional[float] = None) -> CoupleReport:
    """Verify that an n-player game and its two-player reduction coincide.

    The per-miner coins of the n-player game collapse into outcome classes
    that both games consume, so views must be isomorphic (honest miners
    collapsed to one identity) and attacker rewards exactly equal, seed by
    seed.  ``wrong_honest_rate`` drives the negative control: the mismatched
    class stream is reported with its first divergent round.
    """
    from .strategies import make_strategy
    if strategy_name not in ("honest", "classic_sm", "strong_sm"):
        raise ParameterError("couple_check needs an outcome-class-driven baseline "
                             f"strategy, not {strategy_name!r}")
    dist = round_distribution(hashrates, latency)
    n_rounds = horizon_heights * 8 + 500

    rewards_equal = True
    views_iso = True
    first_div: Optional[int] = None
    for seed in seeds:
        classes, classes_other, marks = _coupled_streams(
            hashrates, latency, seed, n_rounds, wrong_honest_rate)
        if wrong_honest_rate is not None:
            diff = np.flatnonzero(classes_other != classes)
            if len(diff) and (first_div is None or int(diff[0]) + 1 < first_div):
                first_div = int(diff[0]) + 1
            continue

        def multiplicity(t: int, _marks=marks) -> tuple[int, ...]:
            return _marks[t - 1]

        results = []
        for rec in (Recorder(), Recorder(honest_multiplicity=multiplicity)):
            p = GameParams(alpha_prime=dist.alpha_prime, beta_prime=dist.beta_prime,
                           horizon_heights=horizon_heights, seed=seed,
                           tiebreak=tiebreak, record_view=True)
            g = Game(p, make_strategy(strategy_name, p), outcomes=classes, recorder=rec)
            results.append((g.run(), rec.build_view()))
        (r_red, v_red), (r_full, v_full) = results
        if r_red.reward != r_full.reward:
            rewards_equal = False
        if _view_signature(v_red) != _view_signature(v_full):
            views_iso = False

    return CoupleReport(seeds=list(seeds), rewards_equal=rewards_equal,
                        views_isomorphic=views_iso, first_divergence=first_div,
                        detail="mismatched stream" if first_div is not None else "")
