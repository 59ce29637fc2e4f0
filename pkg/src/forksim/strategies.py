"""Baseline attacker strategies: honest, strong withholding, classic withholding.

Each strategy is an event-driven state machine.  The engine creates the
attacker's block (initially hidden) whenever the attacker mines; the strategy
then decides what to release via :meth:`Game.broadcast_own`.  All baselines
read only the round outcome class, never the identity of individual honest
miners, which is what makes the n-player reduction applicable to them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .engine import Game, GameParams
from .errors import ParameterError


class Strategy:
    """Interface: ``reset`` binds the game, ``step`` reacts to one round.

    ``step`` receives the outcome class plus the heights of the blocks created
    this round (honest ``hb``, attacker ``ab``; ``None`` when absent).  The
    attacker always extends its own private tip, matching the longest-chain
    rule with self-favoring tiebreak, so the only decisions are broadcasts.
    """

    name = "?"

    def reset(self, game: Game) -> None:
        self.g = game

    def step(self, outcome: int, hb: Optional[int], ab: Optional[int]) -> None:
        raise NotImplementedError


class HonestStrategy(Strategy):
    """Longest-chain protocol: broadcast every block upon creation."""

    name = "honest"

    def __init__(self, params: GameParams | None = None):
        pass

    def step(self, outcome, hb, ab):
        if ab is not None:
            self.g.broadcast_own(ab)


@dataclass
class ClassicSmState:
    """Withheld blocks of the classic strategy (heights, bottom-up) plus the
    public height it forked from.  Mirrors the engine's hidden list."""

    hidden: list[int] = field(default_factory=list)
    public_height: int = 0


class ClassicSelfishMining(Strategy):
    """Withhold on create; release on match; release pivotal blocks at once.

    A block at height h is pivotal when the conflict at h-1 needs it now:
    another miner has broadcast at h-1, the attacker created the h-1 block,
    and no attacker block exists above h.  With a lead of exactly two this
    fires together with the match, publishing the whole private chain.
    """

    name = "classic_sm"

    def __init__(self, params: GameParams | None = None):
        self.state = ClassicSmState()

    def reset(self, game: Game) -> None:
        super().reset(game)
        self.state = ClassicSmState()

    def step(self, outcome, hb, ab):
        g = self.g
        st = self.state
        if hb is not None and g.hidden and g.hidden[0][0] == hb:
            g.broadcast_own(hb)
            # remaining block at hb+1 with nothing above it is pivotal now
            if len(g.hidden) == 1 and g.hidden[0][0] == hb + 1:
                g.broadcast_own(hb + 1)
        if ab is not None:
            # pivotal at creation: a live conflict sits directly below
            if g.a_pub == ab - 1 and g.hz == ab - 1 and g.a_pub > g.agreed:
                g.broadcast_own(ab)
        st.hidden = [h for h, _ in g.hidden]
        st.public_height = g.a_pub


class StrongSelfishMining(Strategy):
    """Withhold every block; answer an honest block at a fresh height with the
    matching withheld block.  Profitable only when honest miners tiebreak in
    the attacker's favor, so that rule is required."""

    name = "strong_sm"

    def __init__(self, params: GameParams | None = None):
        if params is not None and params.gamma != 1.0:
            raise ParameterError("strong_sm requires the favor-attacker tiebreak")

    def step(self, outcome, hb, ab):
        g = self.g
        if hb is not None and g.hidden and g.hidden[0][0] == hb:
            g.broadcast_own(hb)


def honest_step(strategy: HonestStrategy, outcome, hb, ab) -> None:
    strategy.step(outcome, hb, ab)


def strong_sm_step(strategy: StrongSelfishMining, outcome, hb, ab) -> None:
    strategy.step(outcome, hb, ab)


def classic_sm_step(strategy: ClassicSelfishMining, outcome, hb, ab) -> None:
    strategy.step(outcome, hb, ab)


STRATEGY_NAMES = ("honest", "strong_sm", "classic_sm",
                  "usm_warmup", "usm_main", "usm_general", "short_sm")


def make_strategy(name: str, params: GameParams, **kwargs) -> Strategy:
    """Build a strategy instance by its registry name."""
    if name == "honest":
        return HonestStrategy(params)
    if name == "classic_sm":
        return ClassicSelfishMining(params)
    if name == "strong_sm":
        return StrongSelfishMining(params)
    if name in ("usm_warmup", "usm_main", "usm_general", "short_sm"):
        from . import usm
        return usm.make_stealth_strategy(name, params, **kwargs)
    raise ParameterError(f"unknown strategy {name!r}; choose from {STRATEGY_NAMES}")
