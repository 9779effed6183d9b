"""Deterministic blockchain segment model: blocks of swap-level transactions,
prefix replay, subset replay, and state digests.

Transactions are modeled at swap granularity. A transaction either applies
all of its swaps in order or reverts as a whole, leaving the state untouched.
All values are immutable; replay functions return fresh states.
"""

from __future__ import annotations

import hashlib
import json
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

from .amm import PoolState, TokenId, swap_exact_in
from .errors import ArbtraceError, MissingPool, PositionOutOfRange, UnknownHash


@dataclass(frozen=True)
class SwapIntent:
    pool_id: str
    token_in: TokenId
    amount_in: int

    def __post_init__(self) -> None:
        if self.amount_in <= 0:
            raise ValueError(f"swap amount_in must be positive, got {self.amount_in}")


@dataclass(frozen=True)
class Transaction:
    tx_hash: str
    sender: str
    swaps: tuple[SwapIntent, ...] = ()
    protocol_tag: str | None = None
    fee_tau: int = 0
    bid_beta: int = 0

    def __post_init__(self) -> None:
        if self.fee_tau < 0 or self.bid_beta < 0:
            raise ValueError(f"tx {self.tx_hash}: negative fee/bid")


@dataclass(frozen=True)
class Block:
    number: int
    txs: tuple[Transaction, ...] = ()


@dataclass(frozen=True, order=True)
class Position:
    """A point in the consensus order. tx_index -1 is the pre-block boundary,
    i.e. the state before any transaction of that block executed."""

    block_number: int
    tx_index: int

    def __str__(self) -> str:
        return f"{self.block_number}:{self.tx_index}"


@dataclass(frozen=True)
class WorldState:
    """Snapshot of every pool's reserves, keyed by pool id."""

    pools: Mapping[str, PoolState]

    def pool(self, pool_id: str) -> PoolState:
        try:
            return self.pools[pool_id]
        except KeyError:
            raise MissingPool(f"pool {pool_id} not in state") from None


@dataclass(frozen=True)
class StateDelta:
    """Per-pool (d_reserve0, d_reserve1) produced by one transaction.

    `reverted` marks a transaction whose swaps could not all execute; its
    changes map is empty and the post-state equals the pre-state.
    """

    changes: Mapping[str, tuple[int, int]]
    reverted: bool = False


@dataclass
class ChainSegment:
    """An initial state plus an ordered run of blocks.

    Immutable after construction; index structures are built lazily and
    shared by all replay helpers.
    """

    initial_state: WorldState
    blocks: tuple[Block, ...]
    _ordered: list[tuple[Position, Transaction]] = field(init=False, repr=False)
    _pos_by_hash: dict[str, Position] = field(init=False, repr=False)
    _numbers: list[int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        numbers = [b.number for b in self.blocks]
        if any(n2 <= n1 for n1, n2 in zip(numbers, numbers[1:])):
            raise ValueError("block numbers must be strictly increasing")
        ordered: list[tuple[Position, Transaction]] = []
        by_hash: dict[str, Position] = {}
        for block in self.blocks:
            for i, tx in enumerate(block.txs):
                pos = Position(block.number, i)
                ordered.append((pos, tx))
                if tx.tx_hash in by_hash:
                    raise ValueError(f"duplicate tx hash {tx.tx_hash}")
                by_hash[tx.tx_hash] = pos
                for swap in tx.swaps:
                    if swap.pool_id not in self.initial_state.pools:
                        raise MissingPool(
                            f"tx {tx.tx_hash} references pool {swap.pool_id} absent from initial state"
                        )
        self._ordered = ordered
        self._pos_by_hash = by_hash
        self._numbers = numbers

    @property
    def first_block_number(self) -> int:
        return self.blocks[0].number if self.blocks else 0

    @property
    def last_block_number(self) -> int:
        return self.blocks[-1].number if self.blocks else 0

    def pre_boundary(self) -> Position:
        """Position denoting the segment's initial state."""
        return Position(self.first_block_number, -1)

    def last_position(self) -> Position:
        for block in reversed(self.blocks):
            if block.txs:
                return Position(block.number, len(block.txs) - 1)
        return self.pre_boundary()

    def ordered_txs(self) -> list[tuple[Position, Transaction]]:
        return self._ordered

    def tx_at(self, pos: Position) -> Transaction:
        block = self._block_with_number(pos.block_number)
        if block is None or not 0 <= pos.tx_index < len(block.txs):
            raise PositionOutOfRange(f"no transaction at {pos}")
        return block.txs[pos.tx_index]

    def position_of(self, tx_hash: str) -> Position:
        try:
            return self._pos_by_hash[tx_hash]
        except KeyError:
            raise UnknownHash(f"tx hash {tx_hash} not in segment") from None

    def _block_with_number(self, number: int) -> Block | None:
        i = bisect_left(self._numbers, number)
        if i < len(self.blocks) and self.blocks[i].number == number:
            return self.blocks[i]
        return None

    def check_position(self, pos: Position) -> None:
        """Raise unless `pos` is a tx position or a pre-block boundary in range."""
        if not self.blocks:
            raise PositionOutOfRange("empty segment")
        if not self.first_block_number <= pos.block_number <= self.last_block_number:
            raise PositionOutOfRange(f"{pos} outside segment blocks")
        if pos.tx_index == -1:
            return
        block = self._block_with_number(pos.block_number)
        if block is None or not 0 <= pos.tx_index < len(block.txs):
            raise PositionOutOfRange(f"{pos} not a transaction position")

    def window_boundary(self, arb_pos: Position, depth_blocks: int) -> Position:
        """Pre-block boundary `depth_blocks` before the block of `arb_pos`,
        clamped to the segment start."""
        start = max(self.first_block_number, arb_pos.block_number - depth_blocks)
        return Position(start, -1)


def pools_touched(tx: Transaction) -> frozenset[str]:
    """Pool ids named by the transaction's swap intents (empty for non-swap txs)."""
    return frozenset(s.pool_id for s in tx.swaps)


def apply_tx(state: WorldState, tx: Transaction) -> tuple[WorldState, StateDelta]:
    """Execute the transaction's swaps in order against `state`.

    Each swap sees the previous swap's updated reserves. If any swap fails
    (missing pool, foreign token, empty reserve) the whole transaction
    reverts: the returned state is `state` and the delta is empty with the
    reverted flag set.
    """
    if not tx.swaps:
        return state, StateDelta(changes={})
    scratch = dict(state.pools)
    try:
        for swap in tx.swaps:
            pool = scratch.get(swap.pool_id)
            if pool is None:
                raise MissingPool(f"pool {swap.pool_id} not in state")
            result = swap_exact_in(pool, swap.token_in, swap.amount_in)
            scratch[swap.pool_id] = result.new_pool
    except ArbtraceError:
        return state, StateDelta(changes={}, reverted=True)
    changes = {}
    for pool_id, new_pool in scratch.items():
        old = state.pools[pool_id]
        d0, d1 = new_pool.reserve0 - old.reserve0, new_pool.reserve1 - old.reserve1
        if d0 or d1:
            changes[pool_id] = (d0, d1)
    return WorldState(pools=scratch), StateDelta(changes=changes)


def apply_delta(state: WorldState, delta: StateDelta) -> WorldState:
    """Apply recorded reserve changes; inverse check for delta composability."""
    if not delta.changes:
        return state
    pools = dict(state.pools)
    for pool_id, (d0, d1) in delta.changes.items():
        old = pools[pool_id]
        pools[pool_id] = old.with_reserves(old.reserve0 + d0, old.reserve1 + d1)
    return WorldState(pools=pools)


def replay_prefix(segment: ChainSegment, upto: Position) -> WorldState:
    """State after every transaction at position <= `upto`, from the initial state."""
    segment.check_position(upto)
    state = segment.initial_state
    for pos, tx in segment.ordered_txs():
        if pos > upto:
            break
        state, _ = apply_tx(state, tx)
    return state


def replay_with_subset(
    segment: ChainSegment, include: Iterable[str], upto: Position
) -> WorldState:
    """State after applying only the `include` hashes, in chronological order.

    Every hash must belong to a transaction at position <= `upto`.
    """
    segment.check_position(upto)
    wanted = set(include)
    for tx_hash in wanted:
        pos = segment.position_of(tx_hash)
        if pos > upto:
            raise UnknownHash(f"tx {tx_hash} lies after {upto}")
    state = segment.initial_state
    for pos, tx in segment.ordered_txs():
        if pos > upto:
            break
        if tx.tx_hash in wanted:
            state, _ = apply_tx(state, tx)
    return state


def state_digest(state: WorldState) -> str:
    """Canonical sha256 over pools sorted by id; equal states, equal digests."""
    record = [
        {
            "pool_id": p.pool_id,
            "token0": p.token0,
            "token1": p.token1,
            "reserve0": str(p.reserve0),
            "reserve1": str(p.reserve1),
            "fee_ppm": p.fee_ppm,
        }
        for _, p in sorted(state.pools.items())
    ]
    blob = json.dumps(record, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


class SegmentReplayer:
    """Prefix replay with lazily cached block-boundary snapshots.

    Replaying to a position costs one intra-block pass once the boundary
    cache covers the block, so repeated queries over a segment stay cheap.
    """

    def __init__(self, segment: ChainSegment):
        self.segment = segment
        self._boundaries: list[WorldState] = [segment.initial_state]
        self._numbers = [b.number for b in segment.blocks]

    def _boundary(self, block_idx: int) -> WorldState:
        """State before segment.blocks[block_idx]."""
        while len(self._boundaries) <= block_idx:
            state = self._boundaries[-1]
            for tx in self.segment.blocks[len(self._boundaries) - 1].txs:
                state, _ = apply_tx(state, tx)
            self._boundaries.append(state)
        return self._boundaries[block_idx]

    def state_at(self, pos: Position) -> WorldState:
        """State after every transaction at position <= `pos`."""
        self.segment.check_position(pos)
        idx = bisect_left(self._numbers, pos.block_number)
        if pos.tx_index == -1:
            return self._boundary(idx)
        state = self._boundary(idx)
        for tx in self.segment.blocks[idx].txs[: pos.tx_index + 1]:
            state, _ = apply_tx(state, tx)
        return state

    def iter_from(
        self, start: Position, upto: Position
    ) -> Iterator[tuple[Position, Transaction, WorldState]]:
        """Walk transactions at positions in (start, upto], yielding the state
        after each one."""
        state = self.state_at(start)
        for pos, tx in self.segment.ordered_txs():
            if pos <= start:
                continue
            if pos > upto:
                break
            state, _ = apply_tx(state, tx)
            yield pos, tx, state
