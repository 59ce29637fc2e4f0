"""Label-randomizing withholding strategies.

These strategies pick each height's Single/Pair label with a biased coin so
that, in the final view, heights are Pair independently with a fixed target
rate ``beta`` -- indistinguishable from honest mining under natural forks at
that rate.  Three variants:

* ``usm_warmup``  -- honest miners tiebreak in the attacker's favor; labels
  are fixed at block creation and the bias denominator is the probability of
  creating the next height's first block.
* ``usm_main``    -- honest miners tiebreak against the attacker; pivotal
  blocks (needed right now to win a live conflict) are forced Single, and the
  coin bias conditions on everything known when the previous height was
  determined.
* ``usm_general`` -- natural forks occur at rate ``beta_prime > 0``;
  simultaneous creations force Pairs, and the coin bias must condition only on
  the public state sequence, which requires the Bayesian filter from
  :mod:`forksim.belief`.

``short_sm`` is the bounded-lead reference strategy used by the closed-form
episode analysis: it cashes out at the first opportunity instead of pressing
a long lead.
"""

from __future__ import annotations

from typing import Optional

from .belief import BeliefState
from .engine import ATTACKER_ONLY, BOTH, HONEST_ONLY, Game, GameParams
from .errors import ParameterError
from .strategies import Strategy

P, S, U = "P", "S", "U"


def validity_bound(name: str, dist) -> float:
    """Largest admissible target pair rate for a stealth strategy."""
    if name == "usm_warmup":
        return dist.block_share
    if name == "usm_main":
        return dist.block_share ** 2
    if name == "usm_general":
        return dist.alpha_prime ** 2 / 2.0
    raise ParameterError(f"no validity bound for {name!r}")


class _StealthCore(Strategy):
    """Shared stack machine for the tiebreak-against variants.

    ``labels`` mirrors the engine's hidden list bottom-up.  ``bias`` is the
    pair-coin bias for the next undetermined height; it is refreshed at every
    determination and at no other moment, which is exactly the conditioning
    discipline the labeling rule prescribes.
    """

    def __init__(self, params: GameParams, beta: float, debug: bool = False):
        self.params = params
        self.dist = params.distribution()
        self.beta = float(beta)
        self.debug = debug
        if params.gamma != 0.0:
            raise ParameterError(f"{self.name} requires the against-attacker tiebreak")

    # hooks implemented by the two variants
    def _refresh_bias(self, label: int, phi_used: float, next_pending: bool) -> None:
        raise NotImplementedError

    def _initial_bias(self) -> float:
        raise NotImplementedError

    def reset(self, game: Game) -> None:
        super().reset(game)
        self.labels: list[str] = []
        self.pcount = 0
        self.bias = self._initial_bias()
        self.det_log: Optional[list] = [] if self.debug else None
        self._cfg = ("Z", 0)

    def _true_config(self) -> tuple[str, int]:
        if self.labels:
            return self.labels[-1], self.pcount
        g = self.g
        if g.a_pub == g.hz and g.hz > g.agreed:
            return "T", 0
        return "Z", 0

    def _det(self, label: int, next_pending: bool = False) -> None:
        phi = self.bias
        if self.det_log is not None:
            self.det_log.append((self._cfg, phi, label))
        self._refresh_bias(label, phi, next_pending)
        if not -1e-9 <= self.bias <= 1 + 1e-9:
            raise ParameterError(
                f"coin bias {self.bias} left [0,1]; target rate too aggressive")
        self._cfg = ("S*", self.pcount) if next_pending else self._true_config()

    def _coin_new_block(self) -> None:
        if self.g.coins.bernoulli(self.bias):
            self.labels.append(P)
            self.pcount += 1
            self._det(1)
        else:
            self.labels.append(S)
            self._det(0)

    def _release_ready(self) -> None:
        # a Single-labeled block releases the moment its parent is public;
        # hidden blocks are contiguous above the public top, so only the
        # bottom of the stack can ever be ready
        g = self.g
        while self.labels and self.labels[0] == S:
            g.broadcast_own(g.hidden[0][0])
            self.labels.pop(0)

    def step(self, outcome, hb, ab):
        g = self.g
        labels = self.labels

        if hb is not None:
            if labels:
                # the honest block always lands on the lowest hidden height,
                # contesting its Pair-labeled match
                g.broadcast_own(hb)
                labels.pop(0)
                self.pcount -= 1
                while labels and labels[0] == S:
                    g.broadcast_own(g.hidden[0][0])
                    labels.pop(0)
                if labels and labels[0] == U and (
                        ab is None or ab != g.hidden[0][0] + 1):
                    # exposed undecided block: pivotal, forced Single
                    g.broadcast_own(g.hidden[0][0])
                    labels.pop(0)
                    self._det(0)
            elif ab != hb:
                self._det(0)        # honest extends, or wins a frontier race

        if ab is not None:
            if ab == hb:
                # simultaneous first blocks at a fresh height: forced Pair
                g.broadcast_own(ab)
                self._det(1)
            elif not labels:
                if g.a_pub == ab - 1 and g.hz == ab - 1 and g.a_pub > g.agreed:
                    # over a live conflict: pivotal, forced Single, wins now
                    g.broadcast_own(ab)
                    self._det(0)
                else:
                    self._coin_new_block()
            else:
                top = labels[-1]
                if top == P:
                    labels.append(U)       # safety unknown; label waits
                elif top == S:
                    self._coin_new_block()
                else:
                    # the undecided block resolves safe: its coin applies now,
                    # and the new block above it is safe as well once the
                    # resolved label is Single
                    if g.coins.bernoulli(self.bias):
                        labels[-1] = P
                        self.pcount += 1
                        labels.append(U)   # config first, then the bias refresh
                        self._det(1)
                    else:
                        labels[-1] = S
                        self._det(0, next_pending=True)
                        self._coin_new_block()
        self._release_ready()


class StealthMain(_StealthCore):
    """Tiebreak-against variant with the full-information coin bias.

    The bias denominator is the probability, given everything known at the
    last determination, that the attacker's next-height block exists and is
    safe; closed forms depend only on the hidden pair count and the top
    label.  Valid for beta <= alpha^2.
    """

    name = "usm_main"

    def __init__(self, params: GameParams, beta: float, debug: bool = False):
        super().__init__(params, beta, debug)
        if self.dist.beta_prime != 0.0:
            raise ParameterError("usm_main is defined for the fork-free game")
        self.alpha = self.dist.block_share
        if not 0 < beta <= self.alpha ** 2 + 1e-12:
            raise ParameterError(
                f"target rate {beta} outside (0, alpha^2={self.alpha**2:.6f}]")

    def _p_safe(self, kind: str, i: int) -> float:
        q = 1.0 - self.alpha
        if kind == "Z":
            return self.alpha
        if kind == "S":
            return 1.0 - q ** (i + 1)
        if kind == "P":
            return 1.0 - (q ** i) * (1.0 + i * self.alpha)
        if kind == "U":
            return 1.0 - q ** i
        raise ParameterError(f"no safe-block probability in config {kind}")

    def _initial_bias(self) -> float:
        return self.beta / self.alpha

    def _refresh_bias(self, label, phi_used, next_pending):
        if next_pending:
            self.bias = self.beta        # block already in hand and safe
            return
        kind, i = self._true_config()
        self.bias = self.beta / self._p_safe(kind, i)


class StealthGeneral(_StealthCore):
    """Natural-fork variant: the coin bias conditions on the public state
    sequence only, via the configuration filter.  Valid for
    beta in [beta_prime, alpha_prime^2 / 2]."""

    name = "usm_general"

    def __init__(self, params: GameParams, beta: float, lead_cap: int = 64,
                 debug: bool = False):
        super().__init__(params, beta, debug)
        d = self.dist
        if not d.beta_prime <= beta <= d.alpha_prime ** 2 / 2.0 + 1e-12:
            raise ParameterError(
                f"target rate {beta} outside [{d.beta_prime}, "
                f"{d.alpha_prime ** 2 / 2.0:.6f}]")
        self.lead_cap = lead_cap

    def reset(self, game: Game) -> None:
        self.filter = BeliefState(self.dist.alpha_prime, self.dist.beta_prime,
                                  self.beta, lead_cap=self.lead_cap)
        super().reset(game)

    @property
    def truncation_eps(self) -> float:
        return self.filter.truncation_eps if hasattr(self, "filter") else 0.0

    def _initial_bias(self) -> float:
        return self.filter.bias()

    def _refresh_bias(self, label, phi_used, next_pending):
        self.filter.update(label, phi_used)
        self.bias = self.filter.bias()


class StealthWarmup(Strategy):
    """Tiebreak-for variant: every pair is won, so labels are fixed at block
    creation.  The bias denominator is the probability of creating the next
    height's first block given the hidden count at the previous creation.
    Valid for beta <= alpha."""

    name = "usm_warmup"

    def __init__(self, params: GameParams, beta: float, debug: bool = False):
        self.params = params
        self.dist = params.distribution()
        if self.dist.beta_prime != 0.0:
            raise ParameterError("usm_warmup is defined for the fork-free game")
        if params.gamma != 1.0:
            raise ParameterError("usm_warmup requires the favor-attacker tiebreak")
        self.alpha = self.dist.block_share
        self.beta = float(beta)
        if not 0 < beta <= self.alpha + 1e-12:
            raise ParameterError(f"target rate {beta} outside (0, alpha]")
        self.debug = debug

    def reset(self, game: Game) -> None:
        super().reset(game)
        self.labels: list[str] = []
        self.pcount = 0
        self.pending_p = self.alpha
        self.det_log: Optional[list] = [] if self.debug else None

    def _log(self, label: int) -> None:
        if self.det_log is not None:
            self.det_log.append((("W", self.pcount), self.pending_p, label))

    def step(self, outcome, hb, ab):
        g = self.g
        labels = self.labels
        if hb is not None:
            if labels:
                g.broadcast_own(hb)       # contested pair; honest adopts it
                labels.pop(0)
                self.pcount -= 1
                while labels and labels[0] == S:
                    g.broadcast_own(g.hidden[0][0])
                    labels.pop(0)
            else:
                self._log(0)
                self.pending_p = self.alpha    # next height starts fresh
        if ab is not None:
            bias = self.beta / self.pending_p
            if g.coins.bernoulli(bias):
                labels.append(P)
                self.pcount += 1
                self._log(1)
            else:
                labels.append(S)
                self._log(0)
                while labels and labels[0] == S:
                    g.broadcast_own(g.hidden[0][0])
                    labels.pop(0)
            # only pair-labeled blocks cost the honest side a round: hidden
            # singles release in the same cascade as the pair below them
            self.pending_p = 1.0 - (1.0 - self.alpha) ** (self.pcount + 1)


CLEAN, LEAD, BEHIND = 0, 1, 2


class ShortSelfishMining(Strategy):
    """Withhold one block, then cash out at the first opportunity.

    After hiding its first block the strategy publishes everything as soon as
    a round pattern guarantees a strictly longer chain, and concedes when the
    honest side resolves the race first.  Between episodes it behaves like an
    honest miner.
    """

    name = "short_sm"

    def __init__(self, params: GameParams, debug: bool = False):
        if params.gamma != 0.0:
            raise ParameterError("short_sm requires the against-attacker tiebreak")
        self.debug = debug

    def reset(self, game: Game) -> None:
        super().reset(game)
        self.phase = CLEAN
        # (own blocks entering the chain, total blocks entering) per episode
        self.episode_log: Optional[list] = [] if self.debug else None

    def _log_episode(self, own: int, total: int) -> None:
        if self.episode_log is not None:
            self.episode_log.append((own, total))

    def _publish_all(self) -> None:
        g = self.g
        n = len(g.hidden)
        while g.hidden:
            g.broadcast_own(g.hidden[0][0])
        self._log_episode(n, n)
        self.phase = CLEAN

    def step(self, outcome, hb, ab):
        g = self.g
        if self.phase == CLEAN:
            if ab is not None and hb is None:
                if g.a_pub == ab - 1 and g.hz == ab - 1 and g.a_pub > g.agreed:
                    g.broadcast_own(ab)    # pivotal over a leftover fork: win it
                else:
                    self.phase = LEAD      # episode starts: hide the block
            elif ab is not None:
                g.broadcast_own(ab)        # simultaneous fork: behave honestly
        elif self.phase == LEAD:
            if outcome == ATTACKER_ONLY:
                pass                       # extend the hidden lead
            elif outcome == BOTH:
                self._publish_all()        # strictly longer now: cash out
            else:
                if len(g.hidden) == 1:
                    self.phase = BEHIND    # do not match; wait for the resolution
                else:
                    self._publish_all()
        else:  # BEHIND: hidden lead shadows the honest chain at equal height
            if outcome == ATTACKER_ONLY:
                self._publish_all()
            elif outcome == HONEST_ONLY:
                self._log_episode(0, g.hz - g.agreed)
                g.abandon_hidden()         # concede the race
                self.phase = CLEAN
            # a simultaneous round keeps the shadow race level


def usm_warmup_step(strategy: StealthWarmup, outcome, hb, ab) -> None:
    strategy.step(outcome, hb, ab)


def usm_main_step(strategy: StealthMain, outcome, hb, ab) -> None:
    strategy.step(outcome, hb, ab)


def usm_general_step(strategy: StealthGeneral, outcome, hb, ab) -> None:
    strategy.step(outcome, hb, ab)


def short_sm_step(strategy: ShortSelfishMining, outcome, hb, ab) -> None:
    strategy.step(outcome, hb, ab)


def make_stealth_strategy(name: str, params: GameParams, beta: float | None = None,
                          beta_margin: float | None = None, lead_cap: int = 64,
                          debug: bool = False) -> Strategy:
    if name == "short_sm":
        return ShortSelfishMining(params, debug=debug)
    if beta is None:
        margin = 0.5 if beta_margin is None else float(beta_margin)
        if not 0 < margin <= 1:
            raise ParameterError("beta_margin must lie in (0,1]")
        beta = validity_bound(name, params.distribution()) * margin
        if name == "usm_general":
            beta = max(beta, params.distribution().beta_prime)
    if name == "usm_warmup":
        return StealthWarmup(params, beta, debug=debug)
    if name == "usm_main":
        return StealthMain(params, beta, debug=debug)
    if name == "usm_general":
        return StealthGeneral(params, beta, lead_cap=lead_cap, debug=debug)
    raise ParameterError(f"unknown stealth strategy {name!r}")
