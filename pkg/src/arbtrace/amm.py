"""Constant-product pool math on exact integers.

Reserves are integers in the smallest token unit and all swap outputs are
floored at exactly one point, so replaying the same swap against the same
pool is bit-for-bit deterministic. Rates and cycle coefficients are exact
`Fraction` values, never floats.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from .errors import BrokenCycle, EmptyPool, MissingPool, UnknownToken

PPM = 1_000_000

TokenId = str


@dataclass(frozen=True)
class PoolState:
    """Reserves and input fee of a two-token constant-product pool."""

    pool_id: str
    token0: TokenId
    token1: TokenId
    reserve0: int
    reserve1: int
    fee_ppm: int = 0

    def __post_init__(self) -> None:
        if not self.token0 or not self.token1:
            raise ValueError("token ids must be non-empty")
        if self.token0 == self.token1:
            raise ValueError(f"pool {self.pool_id}: token0 == token1 ({self.token0})")
        if self.reserve0 < 0 or self.reserve1 < 0:
            raise ValueError(f"pool {self.pool_id}: negative reserve")
        if not 0 <= self.fee_ppm < PPM:
            raise ValueError(f"pool {self.pool_id}: fee_ppm {self.fee_ppm} outside [0, {PPM})")

    def has_token(self, token: TokenId) -> bool:
        return token in (self.token0, self.token1)

    def other(self, token: TokenId) -> TokenId:
        if token == self.token0:
            return self.token1
        if token == self.token1:
            return self.token0
        raise UnknownToken(f"token {token!r} not in pool {self.pool_id}")

    def oriented(self, token_in: TokenId) -> tuple[int, int]:
        """Reserves as (reserve_in, reserve_out) for the given input token."""
        if token_in == self.token0:
            return self.reserve0, self.reserve1
        if token_in == self.token1:
            return self.reserve1, self.reserve0
        raise UnknownToken(f"token {token_in!r} not in pool {self.pool_id}")

    def with_reserves(self, reserve0: int, reserve1: int) -> "PoolState":
        return PoolState(self.pool_id, self.token0, self.token1, reserve0, reserve1, self.fee_ppm)


@dataclass(frozen=True)
class SwapResult:
    """Outcome of one swap: amounts moved and the updated pool."""

    amount_in: int
    amount_out: int
    new_pool: PoolState


@dataclass(frozen=True)
class RouteHop:
    pool_id: str
    token_in: TokenId
    token_out: TokenId


@dataclass(frozen=True)
class ArbRoute:
    """A closed cycle of swaps; the output of each hop feeds the next."""

    hops: tuple[RouteHop, ...]

    def __post_init__(self) -> None:
        if len(self.hops) < 2:
            raise BrokenCycle(f"route needs at least 2 hops, got {len(self.hops)}")
        for a, b in zip(self.hops, self.hops[1:]):
            if a.token_out != b.token_in:
                raise BrokenCycle(f"hop into {b.pool_id} expects {a.token_out}, declares {b.token_in}")
        if self.hops[-1].token_out != self.hops[0].token_in:
            raise BrokenCycle("route does not return to its start token")

    @property
    def start_token(self) -> TokenId:
        return self.hops[0].token_in

    @property
    def pool_ids(self) -> frozenset[str]:
        return frozenset(h.pool_id for h in self.hops)


def swap_exact_in(pool: PoolState, token_in: TokenId, amount_in: int) -> SwapResult:
    """Swap `amount_in` of `token_in` into the pool.

    The fee is charged on the input leg and stays in the pool:
    a_eff = floor(amount_in * (PPM - fee) / PPM) and
    amount_out = floor(reserve_out * a_eff / (reserve_in + a_eff)).
    The input pool is not modified.
    """
    if amount_in <= 0:
        raise ValueError(f"amount_in must be positive, got {amount_in}")
    r_in, r_out = pool.oriented(token_in)
    if r_in == 0 or r_out == 0:
        raise EmptyPool(f"pool {pool.pool_id} has an empty reserve")
    a_eff = amount_in * (PPM - pool.fee_ppm) // PPM
    amount_out = r_out * a_eff // (r_in + a_eff)
    new_in, new_out = r_in + amount_in, r_out - amount_out
    if token_in == pool.token0:
        new_pool = pool.with_reserves(new_in, new_out)
    else:
        new_pool = pool.with_reserves(new_out, new_in)
    return SwapResult(amount_in=amount_in, amount_out=amount_out, new_pool=new_pool)


def spot_rate(pool: PoolState, token_in: TokenId, include_fee: bool = False) -> Fraction:
    """Marginal exchange rate reserve_out / reserve_in, optionally after fee."""
    r_in, r_out = pool.oriented(token_in)
    if r_in == 0 or r_out == 0:
        raise EmptyPool(f"pool {pool.pool_id} has an empty reserve")
    rate = Fraction(r_out, r_in)
    if include_fee:
        rate *= Fraction(PPM - pool.fee_ppm, PPM)
    return rate


def _pool_map(state) -> Mapping[str, PoolState]:
    # Accepts a WorldState or a plain {pool_id: PoolState} mapping.
    return getattr(state, "pools", state)


def cycle_coefficient(state, route: ArbRoute, include_fee: bool = False) -> Fraction:
    """Product of spot rates around the route's hops.

    A value above 1 means a marginal unit pushed around the cycle comes back
    larger, i.e. the route is potentially profitable before slippage.
    """
    pools = _pool_map(state)
    k = Fraction(1)
    for hop in route.hops:
        pool = pools.get(hop.pool_id)
        if pool is None:
            raise MissingPool(f"pool {hop.pool_id} not in state")
        if not pool.has_token(hop.token_in) or not pool.has_token(hop.token_out):
            raise UnknownToken(
                f"hop tokens {hop.token_in}->{hop.token_out} not in pool {hop.pool_id}"
            )
        k *= spot_rate(pool, hop.token_in, include_fee=include_fee)
    return k
