"""Atomic-arbitrage classification and counterfactual profit evaluation.

A transaction is an atomic arbitrage when it has at least two swaps, a
non-negative net balance change in every asset it touches, and a strictly
positive profit after its declared fee and priority bid. Profit here is
always an exact rational in base-token units.

`mev_profit` evaluates what the arbitrage is worth in an arbitrary world
state, either by re-running its swaps with the original amounts or by
re-optimizing the trade size over its route.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from math import isqrt
from typing import Mapping

from .amm import PPM, ArbRoute, PoolState, RouteHop, TokenId, cycle_coefficient, swap_exact_in
from .chain import Transaction, WorldState, apply_tx
from .errors import BrokenCycle, MissingPool, MissingPrice, NotACycle, UnknownToken


class ReplayMode(Enum):
    """How an arbitrage is re-run in a counterfactual state: with its original
    calldata amounts, or with the trade size re-optimized for that state."""

    FIXED_AMOUNTS = "fixed"
    OPTIMAL_AMOUNT = "optimal"


class Criterion(Enum):
    MULTI_SWAP = "multi_swap"
    SUFFICIENCY = "sufficiency"
    PROFITABILITY = "profitability"


@dataclass(frozen=True)
class PriceTable:
    """Exact base-token prices per smallest unit of each asset."""

    base_token: TokenId
    prices: Mapping[TokenId, Fraction]

    def __post_init__(self) -> None:
        if self.prices.get(self.base_token) != 1:
            raise ValueError("base token must be priced at exactly 1")
        for token, price in self.prices.items():
            if price <= 0:
                raise ValueError(f"non-positive price for {token}")

    def value_of(self, token: TokenId) -> Fraction:
        try:
            return self.prices[token]
        except KeyError:
            raise MissingPrice(f"no price for asset {token}") from None


@dataclass(frozen=True)
class ArbClassification:
    is_atomic_arb: bool
    n_swaps: int
    net_changes: Mapping[TokenId, int]
    gross_value: Fraction
    profit: Fraction
    failed_criterion: Criterion | None


def _net_changes(state_before: WorldState, delta) -> dict[TokenId, int]:
    """Trader-side net asset changes: the negation of pool reserve changes."""
    net: dict[TokenId, int] = {}
    for pool_id, (d0, d1) in delta.changes.items():
        pool = state_before.pool(pool_id)
        net[pool.token0] = net.get(pool.token0, 0) - d0
        net[pool.token1] = net.get(pool.token1, 0) - d1
    return net


def classify_from_delta(
    tx: Transaction, state_before: WorldState, delta, prices: PriceTable
) -> ArbClassification:
    """Classify using an already-computed execution delta (fast path)."""
    n_swaps = len(tx.swaps)
    net = {} if delta.reverted else _net_changes(state_before, delta)
    gross = Fraction(0)
    for token, change in net.items():
        gross += change * prices.value_of(token)
    profit = gross - tx.fee_tau - tx.bid_beta

    failed: Criterion | None = None
    if n_swaps < 2:
        failed = Criterion.MULTI_SWAP
    elif delta.reverted or any(v < 0 for v in net.values()):
        failed = Criterion.SUFFICIENCY
    elif profit <= 0:
        failed = Criterion.PROFITABILITY
    return ArbClassification(
        is_atomic_arb=failed is None,
        n_swaps=n_swaps,
        net_changes=net,
        gross_value=gross,
        profit=profit,
        failed_criterion=failed,
    )


def classify(tx: Transaction, state_before: WorldState, prices: PriceTable) -> ArbClassification:
    """Execute `tx` against `state_before` and test the three arbitrage criteria."""
    _, delta = apply_tx(state_before, tx)
    return classify_from_delta(tx, state_before, delta, prices)


def route_from_tx(tx: Transaction, state: WorldState) -> ArbRoute:
    """Read the transaction's swaps as a closed route; each hop's output token
    is the other side of its pool."""
    if len(tx.swaps) < 2:
        raise NotACycle(f"tx {tx.tx_hash} has {len(tx.swaps)} swap(s)")
    hops = []
    try:
        for swap in tx.swaps:
            pool = state.pool(swap.pool_id)
            hops.append(RouteHop(swap.pool_id, swap.token_in, pool.other(swap.token_in)))
        return ArbRoute(tuple(hops))
    except (BrokenCycle, MissingPool, UnknownToken) as exc:
        raise NotACycle(f"tx {tx.tx_hash}: {exc}") from None


def _route_output(pools: Mapping[str, PoolState], route: ArbRoute, amount_in: int) -> int:
    """Chained output of pushing `amount_in` around the route, updating a
    scratch copy of each touched pool between hops."""
    scratch: dict[str, PoolState] = {}
    x = amount_in
    for hop in route.hops:
        if x == 0:
            return 0
        pool = scratch.get(hop.pool_id)
        if pool is None:
            pool = pools.get(hop.pool_id)
            if pool is None:
                raise MissingPool(f"pool {hop.pool_id} not in state")
        result = swap_exact_in(pool, hop.token_in, x)
        scratch[hop.pool_id] = result.new_pool
        x = result.amount_out
    return x


def profit_of_route(
    state: WorldState, route: ArbRoute, amount_in: int, prices: PriceTable
) -> Fraction:
    """Net start-token gain of the route at a fixed input, in base units."""
    if amount_in <= 0:
        raise ValueError("amount_in must be positive")
    out = _route_output(state.pools, route, amount_in)
    return (out - amount_in) * prices.value_of(route.start_token)


# --- integer optimum search ------------------------------------------------
#
# The real-valued relaxation of the chained output (fees applied exactly, no
# flooring) is a Moebius function g(a) = alpha*a / (beta*a + gamma) obtained
# by composing the per-hop transforms, so g(a) - a is strictly concave with a
# closed-form peak. The floored profit F never exceeds it, which turns the
# relaxation into a certificate: once every amount whose envelope value could
# still beat the best found integer has been scanned, the optimum is exact.

_CERTIFIED_WIDTH = 4096
_LOCAL_SCAN = 32


def _chain_out(legs: list[tuple[int, int, int]], amount: int) -> int:
    x = amount
    for r_in, r_out, keep in legs:
        x = x * keep // PPM
        if x == 0:
            return 0
        x = r_out * x // (r_in + x)
    return x


def _best_amount(legs: list[tuple[int, int, int]]) -> tuple[int, int]:
    """Exact integer (amount, profit) maximizing chained output minus input.

    Exact whenever the envelope-certified window is at most _CERTIFIED_WIDTH
    wide (always the case at modest reserve scales); beyond that a local scan
    around the analytic peak is used, still deterministic.
    """
    alpha, beta, gamma = 1, 0, 1
    for r_in, r_out, keep in legs:
        ha, hb, hg = r_out * keep, keep, r_in * PPM
        alpha, beta, gamma = ha * alpha, hb * alpha + hg * beta, hg * gamma
    bound = legs[-1][1]
    if bound < 1:
        return 0, 0

    def fval(a: int) -> int:
        return _chain_out(legs, a) - a if a > 0 else 0

    def env_ge(a: int, v: int) -> bool:
        # g(a) - a >= v, cross-multiplied (beta*a + gamma > 0)
        return alpha * a >= (v + a) * (beta * a + gamma)

    peak = (isqrt(alpha * gamma) - gamma) // beta
    cands = sorted({min(max(c, 0), bound) for c in (peak - 1, peak, peak + 1, peak + 2)})
    # integer peak of the envelope among the analytic candidates
    peak_best = cands[0]
    for c in cands[1:]:
        n1 = c * (alpha - beta * c - gamma)
        n2 = peak_best * (alpha - beta * peak_best - gamma)
        if n1 * (beta * peak_best + gamma) > n2 * (beta * c + gamma):
            peak_best = c

    best_a, best_v = 0, 0
    for c in cands:
        v = fval(c)
        if v > best_v:
            best_a, best_v = c, v

    if not env_ge(peak_best, best_v + 1):
        return best_a, best_v

    lo, hi = 0, peak_best
    while lo < hi:
        mid = (lo + hi) // 2
        if env_ge(mid, best_v + 1):
            hi = mid
        else:
            lo = mid + 1
    left = lo
    lo, hi = peak_best, bound
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if env_ge(mid, best_v + 1):
            lo = mid
        else:
            hi = mid - 1
    right = lo

    if right - left + 1 > _CERTIFIED_WIDTH:
        left = max(left, peak_best - _LOCAL_SCAN)
        right = min(right, peak_best + _LOCAL_SCAN)
    for a in range(left, right + 1):
        v = fval(a)
        if v > best_v or (v == best_v and v > 0 and a < best_a):
            best_a, best_v = a, v
    return best_a, best_v


def _best_amount_stateful(pools: Mapping[str, PoolState], route: ArbRoute) -> tuple[int, int]:
    """Fallback for routes that revisit a pool: plain ternary plus a scan."""
    last = pools[route.hops[-1].pool_id]
    _, bound = last.oriented(route.hops[-1].token_in)

    def fval(a: int) -> int:
        return _route_output(pools, route, a) - a if a > 0 else 0

    lo, hi = 0, bound
    while hi - lo > 512:
        m1 = lo + (hi - lo) // 3
        m2 = hi - (hi - lo) // 3
        if fval(m1) < fval(m2):
            lo = m1 + 1
        else:
            hi = m2
    best_a, best_v = 0, 0
    for a in range(lo, hi + 1):
        v = fval(a)
        if v > best_v:
            best_a, best_v = a, v
    return best_a, best_v


def optimal_arbitrage(
    state: WorldState, route: ArbRoute, prices: PriceTable
) -> tuple[int, Fraction]:
    """Best integer input amount for the route and its profit in base units.

    Returns (0, 0) when no amount yields a positive profit; an arbitrageur is
    never forced to trade.
    """
    pools = state.pools
    legs: list[tuple[int, int, int]] = []
    for hop in route.hops:
        pool = pools.get(hop.pool_id)
        if pool is None:
            raise MissingPool(f"pool {hop.pool_id} not in state")
        r_in, r_out = pool.oriented(hop.token_in)
        if r_in == 0 or r_out == 0:
            return 0, Fraction(0)
        legs.append((r_in, r_out, PPM - pool.fee_ppm))

    if cycle_coefficient(state, route, include_fee=True) <= 1:
        return 0, Fraction(0)
    if len(route.pool_ids) < len(route.hops):
        amount, value = _best_amount_stateful(pools, route)
    else:
        amount, value = _best_amount(legs)
    if value <= 0:
        return 0, Fraction(0)
    return amount, value * prices.value_of(route.start_token)


def mev_profit(
    state: WorldState, arb_tx: Transaction, mode: ReplayMode, prices: PriceTable
) -> Fraction:
    """Value of executing `arb_tx` in `state`, minus its declared fee and bid.

    FIXED_AMOUNTS re-runs the original swap amounts and values the net asset
    changes (possibly negative); OPTIMAL_AMOUNT re-optimizes the input over
    the transaction's route (never negative before fee/bid).
    """
    route = route_from_tx(arb_tx, state)
    cost = arb_tx.fee_tau + arb_tx.bid_beta
    if mode is ReplayMode.OPTIMAL_AMOUNT:
        _, profit = optimal_arbitrage(state, route, prices)
        return profit - cost
    _, delta = apply_tx(state, arb_tx)
    net = {} if delta.reverted else _net_changes(state, delta)
    gross = Fraction(0)
    for token, change in net.items():
        gross += change * prices.value_of(token)
    return gross - cost
