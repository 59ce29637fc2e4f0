"""Core domain types: blocks, views, height states, and chain rewards.

A view is the DAG of all blocks that were eventually broadcast during a game.
Each height above genesis carries a *state*: Single when all blocks at that
height come from one side, Pair when both the attacker (miner 1) and some
other miner placed a block there.  The per-height state sequence is the only
statistic the detection battery is allowed to read.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from .errors import MalformedViewError, ParameterError

#: Miner identifiers: 1 is the attacker by convention, 2..n are the others.
#: The genesis block uses the reserved sentinel 0.
MinerId = int

GENESIS_ID = 0
GENESIS_CREATOR = 0

ATTACKER: MinerId = 1

FAVOR_ATTACKER = "favor-attacker"
AGAINST_ATTACKER = "against-attacker"
TIEBREAK_RULES = (FAVOR_ATTACKER, AGAINST_ATTACKER)


class HeightState(IntEnum):
    SINGLE = 0
    PAIR = 1


@dataclass(frozen=True)
class Block:
    """One block of the broadcast DAG.

    ``broadcast_round`` is None only while a block is still withheld; blocks
    that are never broadcast do not belong to a view at all.
    """

    id: int
    creator: MinerId
    parent: int | None
    height: int
    created_round: int
    broadcast_round: int | None = None


def genesis_block() -> Block:
    return Block(id=GENESIS_ID, creator=GENESIS_CREATOR, parent=None, height=0,
                 created_round=0, broadcast_round=0)


@dataclass
class View:
    """The set of eventually-broadcast blocks, keyed by block id."""

    blocks: dict[int, Block] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if GENESIS_ID not in self.blocks:
            self.blocks[GENESIS_ID] = genesis_block()

    def add(self, block: Block) -> None:
        self.blocks[block.id] = block

    def max_height(self) -> int:
        return max(b.height for b in self.blocks.values())

    def at_height(self, h: int) -> list[Block]:
        return [b for b in self.blocks.values() if b.height == h]

    def validate(self, two_player: bool = False) -> None:
        """Check the structural view invariants, raising MalformedViewError.

        ``two_player`` additionally enforces the at-most-two-blocks-per-height
        rule with distinct creators.
        """
        if GENESIS_ID not in self.blocks:
            raise MalformedViewError("view lacks a genesis block")
        by_height: dict[int, list[Block]] = {}
        for b in self.blocks.values():
            if b.id == GENESIS_ID:
                continue
            if b.parent not in self.blocks:
                raise MalformedViewError(f"block {b.id} parent {b.parent} missing")
            parent = self.blocks[b.parent]
            if b.height != parent.height + 1:
                raise MalformedViewError(
                    f"block {b.id} height {b.height} != parent height {parent.height}+1")
            if b.broadcast_round is None:
                raise MalformedViewError(f"block {b.id} in view but never broadcast")
            if b.broadcast_round < b.created_round:
                raise MalformedViewError(f"block {b.id} broadcast before creation")
            if parent.broadcast_round is not None and b.broadcast_round < parent.broadcast_round:
                raise MalformedViewError(
                    f"block {b.id} broadcast before its parent {parent.id}")
            by_height.setdefault(b.height, []).append(b)
        top = max(by_height) if by_height else 0
        for h in range(1, top + 1):
            blocks = by_height.get(h)
            if not blocks:
                raise MalformedViewError(f"height {h} empty below the tip")
            if two_player:
                if len(blocks) > 2:
                    raise MalformedViewError(f"height {h} has {len(blocks)} blocks")
                if len(blocks) == 2 and blocks[0].creator == blocks[1].creator:
                    raise MalformedViewError(f"height {h} has two blocks from one creator")


@dataclass(frozen=True)
class StateSequence:
    """Per-height Single/Pair labels for heights 1..H, stored as uint8."""

    states: np.ndarray  # uint8, 0 = Single, 1 = Pair

    def __len__(self) -> int:
        return int(self.states.shape[0])

    def __getitem__(self, i):
        return self.states[i]

    def pair_count(self) -> int:
        return int(self.states.sum())

    @classmethod
    def from_iterable(cls, values: Iterable[int]) -> "StateSequence":
        return cls(np.asarray(list(values), dtype=np.uint8))


def height_states(view: View, h_max: int) -> StateSequence:
    """State of every height 1..h_max: Pair iff both the attacker and a non-
    attacker broadcast a block there.

    Reads only the attacker/non-attacker partition of creators; detection code
    must go through this function rather than inspecting creators directly.
    """
    has_attacker = np.zeros(h_max + 1, dtype=bool)
    has_other = np.zeros(h_max + 1, dtype=bool)
    seen = np.zeros(h_max + 1, dtype=bool)
    for b in view.blocks.values():
        if 0 < b.height <= h_max:
            seen[b.height] = True
            if b.creator == ATTACKER:
                has_attacker[b.height] = True
            else:
                has_other[b.height] = True
    if h_max > 0 and not seen[1:].all():
        missing = int(np.flatnonzero(~seen[1:])[0]) + 1
        raise MalformedViewError(f"height {missing} not populated but h_max={h_max}")
    return StateSequence((has_attacker[1:] & has_other[1:]).astype(np.uint8))


def longest_chain(view: View, tiebreak: str = AGAINST_ATTACKER) -> list[Block]:
    """A maximal-height path from genesis, resolving equal-height forks by the
    tiebreak rule.  Deterministic: ties not settled by the rule fall back to
    the lowest block id.
    """
    if tiebreak not in TIEBREAK_RULES:
        raise ParameterError(f"unknown tiebreak rule {tiebreak!r}")
    tip_height = view.max_height()
    tips = view.at_height(tip_height)
    prefer_attacker = tiebreak == FAVOR_ATTACKER

    def rank(b: Block) -> tuple:
        is_attacker = b.creator == ATTACKER
        return (is_attacker != prefer_attacker, b.id)

    tip = min(tips, key=rank)
    chain = []
    cur: Block | None = tip
    while cur is not None:
        chain.append(cur)
        cur = view.blocks[cur.parent] if cur.parent is not None else None
    chain.reverse()
    return chain


def reward_fraction(view: View, miner: MinerId, tiebreak: str = AGAINST_ATTACKER) -> float:
    """Fraction of non-genesis blocks on the longest chain created by ``miner``."""
    chain = longest_chain(view, tiebreak)
    above_genesis = [b for b in chain if b.height > 0]
    if not above_genesis:
        raise ParameterError("no blocks above genesis; reward fraction undefined")
    return sum(1 for b in above_genesis if b.creator == miner) / len(above_genesis)


# ---------------------------------------------------------------------------
# Serialization: one record per block, ordered by (height, created_round, id).

_FIELDS = ("id", "creator", "parent", "height", "created_round", "broadcast_round")


def _sorted_blocks(view: View) -> list[Block]:
    return sorted(view.blocks.values(), key=lambda b: (b.height, b.created_round, b.id))


def view_to_csv(view: View) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_FIELDS)
    for b in _sorted_blocks(view):
        w.writerow([b.id, b.creator, "" if b.parent is None else b.parent,
                    b.height, b.created_round,
                    "" if b.broadcast_round is None else b.broadcast_round])
    return buf.getvalue()


def view_to_jsonl(view: View) -> str:
    lines = []
    for b in _sorted_blocks(view):
        lines.append(json.dumps({f: getattr(b, f) for f in _FIELDS}))
    return "\n".join(lines) + "\n"


def _block_from_record(rec: dict) -> Block:
    parent = rec["parent"]
    parent = None if parent in ("", None) else int(parent)
    bcast = rec["broadcast_round"]
    bcast = None if bcast in ("", None) else int(bcast)
    return Block(id=int(rec["id"]), creator=int(rec["creator"]), parent=parent,
                 height=int(rec["height"]), created_round=int(rec["created_round"]),
                 broadcast_round=bcast)


def view_from_csv(text: str) -> View:
    rows = list(csv.DictReader(io.StringIO(text)))
    view = View()
    for rec in rows:
        b = _block_from_record(rec)
        if b.id != GENESIS_ID:
            view.add(b)
    return view


def view_from_jsonl(text: str) -> View:
    view = View()
    for line in text.splitlines():
        if not line.strip():
            continue
        b = _block_from_record(json.loads(line))
        if b.id != GENESIS_ID:
            view.add(b)
    return view
