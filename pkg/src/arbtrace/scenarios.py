"""Seeded generator of synthetic chain segments with known ground truth.

Every scenario is a short run of blocks over a two-pool arbitrage route plus
disjoint noise pools. Creator transactions push the route's cycle coefficient
to a target, optional competing arbitrageurs consume part of the opportunity,
and a final transaction extracts the optimum. Because the creators are
injected, the true source is known by construction, which is what the
attribution methods are evaluated against.

Generation is a pure function of the spec: the same seed always yields
byte-identical segments.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction

from .amm import PPM, ArbRoute, PoolState, RouteHop, cycle_coefficient, swap_exact_in
from .chain import Block, ChainSegment, SwapIntent, Transaction, WorldState, apply_tx
from .detect import PriceTable, optimal_arbitrage
from .errors import InfeasibleSpec

RESERVE_SCALE = 10**9

BASE_TOKEN = "BASE"
ROUTE_TOKEN = "TKA"
NOISE_TOKENS = ("NTA", "NTB")

PROTOCOL_TAGS = ("dexswap", "quickdex", "lending", None)


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    n_pools: int = 4
    n_blocks: int = 3
    noise_tx_per_block: int = 10
    n_creators: int = 1
    competing_arbs: int = 0
    imbalance_magnitude: Fraction = Fraction(112, 100)
    fee_ppm: int = 3000
    preexisting: bool = False


class ExpectedKind(Enum):
    TX = "tx"
    PRE_EXISTING = "preexisting"
    TIED = "tied"


@dataclass(frozen=True)
class ExpectedSource:
    kind: ExpectedKind
    tx_hashes: tuple[str, ...] = ()


@dataclass(frozen=True)
class GroundTruth:
    seed: int
    arb_tx_hash: str
    expected_source: ExpectedSource
    creator_hashes: tuple[str, ...]
    route: ArbRoute


def uniform_prices(segment: ChainSegment) -> PriceTable:
    """Price table valuing every token in the segment at exactly 1 base unit."""
    prices = {BASE_TOKEN: Fraction(1)}
    for pool in segment.initial_state.pools.values():
        prices.setdefault(pool.token0, Fraction(1))
        prices.setdefault(pool.token1, Fraction(1))
    return PriceTable(BASE_TOKEN, prices)


def _validate(spec: ScenarioSpec) -> None:
    if spec.n_pools < 2:
        raise InfeasibleSpec("need at least the two route pools")
    if spec.n_blocks < 1:
        raise InfeasibleSpec("need at least one block")
    if not 0 <= spec.fee_ppm < PPM:
        raise InfeasibleSpec(f"fee_ppm {spec.fee_ppm} outside [0, {PPM})")
    if not spec.preexisting and spec.n_creators < 1:
        raise InfeasibleSpec("no creators and no pre-existing imbalance: nothing to attribute")
    if spec.imbalance_magnitude <= 1:
        raise InfeasibleSpec("imbalance_magnitude must exceed 1")


def _route() -> ArbRoute:
    return ArbRoute(
        (RouteHop("R1", BASE_TOKEN, ROUTE_TOKEN), RouteHop("R2", ROUTE_TOKEN, BASE_TOKEN))
    )


def _label_route(route: ArbRoute, label: str) -> ArbRoute:
    return ArbRoute(
        tuple(RouteHop(f"{label}/{h.pool_id}", h.token_in, h.token_out) for h in route.hops)
    )


def _k_fee(pools: dict[str, PoolState], route: ArbRoute) -> Fraction:
    return cycle_coefficient(pools, route, include_fee=True)


def _solve_creator_amount(
    pools: dict[str, PoolState], route: ArbRoute, r2_id: str, n_swaps: int, target: Fraction
) -> int:
    """Smallest swap size such that `n_swaps` identical base-token swaps into
    the second route pool push the fee-inclusive cycle coefficient to the
    target."""

    def k_after(amount: int) -> Fraction:
        scratch = dict(pools)
        for _ in range(n_swaps):
            scratch[r2_id] = swap_exact_in(scratch[r2_id], BASE_TOKEN, amount).new_pool
        return _k_fee(scratch, route)

    hi = max(pools[r2_id].reserve0 // max(n_swaps, 1) // 4, 1)
    cap = pools[r2_id].reserve0 * 64
    while k_after(hi) < target:
        hi *= 2
        if hi > cap:
            raise InfeasibleSpec(f"imbalance {target} unreachable at these reserves")
    lo = 1
    while lo < hi:
        mid = (lo + hi) // 2
        if k_after(mid) >= target:
            hi = mid
        else:
            lo = mid + 1
    return lo


@dataclass
class _Plan:
    kind: str  # "noise" | "creator" | "competitor" | "arb"
    pool_id: str = ""
    token_in: str = ""
    amount: int = 0
    frac_pct: int = 0


class _Builder:
    """Walks planned items chronologically, assigning hashes and computing the
    state-dependent transactions (competitors, final arbitrage)."""

    def __init__(self, label: str, initial: WorldState, route: ArbRoute, rng: random.Random):
        self.label = label
        self.state = initial
        self.route = route
        self.rng = rng
        self.counter = 0
        self.creator_hashes: list[str] = []
        self.arb_hash: str | None = None
        self.prices: PriceTable | None = None

    def _hash(self) -> str:
        self.counter += 1
        return f"{self.label}:t{self.counter:05d}"

    def build(self, item: _Plan) -> Transaction:
        if item.kind == "noise":
            tx = Transaction(
                tx_hash=self._hash(),
                sender=f"user-{self.rng.randrange(40)}",
                swaps=(SwapIntent(item.pool_id, item.token_in, item.amount),),
                protocol_tag=self.rng.choice(PROTOCOL_TAGS),
            )
        elif item.kind == "creator":
            tx = Transaction(
                tx_hash=self._hash(),
                sender=f"maker-{self.label}",
                swaps=(SwapIntent(item.pool_id, item.token_in, item.amount),),
                protocol_tag="dexswap",
            )
            self.creator_hashes.append(tx.tx_hash)
        elif item.kind == "competitor":
            tx = self._arb_tx(frac_pct=item.frac_pct, sender=f"rival-{self.rng.randrange(8)}")
        elif item.kind == "arb":
            tx = self._arb_tx(frac_pct=100, sender="searcher-0")
            self.arb_hash = tx.tx_hash
        else:
            raise AssertionError(item.kind)
        self.state, delta = apply_tx(self.state, tx)
        if delta.reverted:
            raise InfeasibleSpec(f"generated tx {tx.tx_hash} reverted")
        return tx

    def _arb_tx(self, frac_pct: int, sender: str) -> Transaction:
        assert self.prices is not None
        amount_star, profit = optimal_arbitrage(self.state, self.route, self.prices)
        if amount_star == 0 or profit <= 0:
            raise InfeasibleSpec("no opportunity left for an arbitrage transaction")
        amount = max(1, amount_star * frac_pct // 100)
        first, second = self.route.hops
        out1 = swap_exact_in(self.state.pool(first.pool_id), first.token_in, amount).amount_out
        if out1 <= 0:
            raise InfeasibleSpec("arbitrage amount floors to zero mid-route")
        return Transaction(
            tx_hash=self._hash(),
            sender=sender,
            swaps=(
                SwapIntent(first.pool_id, first.token_in, amount),
                SwapIntent(second.pool_id, second.token_in, out1),
            ),
            protocol_tag="arbbot",
        )


def generate(
    spec: ScenarioSpec, label: str | None = None, block_start: int = 1
) -> tuple[ChainSegment, GroundTruth]:
    """Build one scenario. Pool ids and tx hashes are prefixed with `label`
    so suites can be concatenated into a single segment."""
    _validate(spec)
    label = label if label is not None else f"s{spec.seed}"
    rng = random.Random(spec.seed)

    jitter = RESERVE_SCALE // 64
    pools: dict[str, PoolState] = {}
    r1 = RESERVE_SCALE + rng.randrange(jitter)
    r2 = RESERVE_SCALE + rng.randrange(jitter)
    route = _label_route(_route(), label)
    r1_id, r2_id = route.hops[0].pool_id, route.hops[1].pool_id
    pools[r1_id] = PoolState(r1_id, BASE_TOKEN, ROUTE_TOKEN, r1, r1, spec.fee_ppm)
    pools[r2_id] = PoolState(r2_id, BASE_TOKEN, ROUTE_TOKEN, r2, r2, spec.fee_ppm)

    if spec.preexisting:
        # Bake the imbalance into the initial reserves instead of emitting creators.
        keep = Fraction(PPM - spec.fee_ppm, PPM)
        k_needed = spec.imbalance_magnitude / (keep * keep)
        base_side = -(-r2 * k_needed.numerator // k_needed.denominator)  # ceil
        pools[r2_id] = PoolState(r2_id, BASE_TOKEN, ROUTE_TOKEN, int(base_side), r2, spec.fee_ppm)

    noise_pool_ids = []
    for i in range(spec.n_pools - 2):
        pid = f"{label}/N{i}"
        reserve = RESERVE_SCALE + rng.randrange(jitter)
        pools[pid] = PoolState(pid, NOISE_TOKENS[0], NOISE_TOKENS[1], reserve, reserve, spec.fee_ppm)
        noise_pool_ids.append(pid)

    creator_amount = 0
    if not spec.preexisting:
        creator_amount = _solve_creator_amount(
            pools, route, r2_id, spec.n_creators, spec.imbalance_magnitude
        )

    def noise_plan() -> _Plan:
        if not noise_pool_ids:
            # Degenerate two-pool spec: fall back to zero-swap filler, which
            # still exercises ordering without touching the route.
            return _Plan(kind="noise", pool_id="", token_in="", amount=0)
        pid = rng.choice(noise_pool_ids)
        token = rng.choice(NOISE_TOKENS)
        amount = rng.randint(RESERVE_SCALE // 10**4, RESERVE_SCALE // 10**2)
        return _Plan(kind="noise", pool_id=pid, token_in=token, amount=amount)

    plan: list[list[_Plan]] = [
        [noise_plan() for _ in range(spec.noise_tx_per_block)] for _ in range(spec.n_blocks)
    ]

    creator_block = rng.randrange(spec.n_blocks)
    creator_at = rng.randint(0, len(plan[creator_block]))
    if not spec.preexisting:
        creators = [
            _Plan(kind="creator", pool_id=r2_id, token_in=BASE_TOKEN, amount=creator_amount)
            for _ in range(spec.n_creators)
        ]
        plan[creator_block][creator_at:creator_at] = creators
        creator_end = creator_at + len(creators)
    else:
        creator_block, creator_end = 0, 0

    for _ in range(spec.competing_arbs):
        blk = rng.randint(creator_block, spec.n_blocks - 1)
        low = creator_end if blk == creator_block else 0
        at = rng.randint(low, len(plan[blk]))
        plan[blk].insert(at, _Plan(kind="competitor", frac_pct=rng.randint(25, 50)))
    plan[-1].append(_Plan(kind="arb"))

    builder = _Builder(label, WorldState(pools=pools), route, rng)
    builder.prices = PriceTable(
        BASE_TOKEN,
        {
            BASE_TOKEN: Fraction(1),
            ROUTE_TOKEN: Fraction(1),
            NOISE_TOKENS[0]: Fraction(1),
            NOISE_TOKENS[1]: Fraction(1),
        },
    )
    blocks = []
    for b, items in enumerate(plan):
        txs = []
        for item in items:
            if item.kind == "noise" and not item.pool_id:
                builder.counter += 1
                txs.append(
                    Transaction(tx_hash=f"{label}:t{builder.counter:05d}", sender="idle", swaps=())
                )
                continue
            txs.append(builder.build(item))
        blocks.append(Block(number=block_start + b, txs=tuple(txs)))

    segment = ChainSegment(initial_state=WorldState(pools=pools), blocks=tuple(blocks))
    assert builder.arb_hash is not None
    if spec.preexisting:
        expected = ExpectedSource(ExpectedKind.PRE_EXISTING)
    elif spec.n_creators == 1:
        expected = ExpectedSource(ExpectedKind.TX, tuple(builder.creator_hashes))
    else:
        expected = ExpectedSource(ExpectedKind.TIED, tuple(builder.creator_hashes))
    truth = GroundTruth(
        seed=spec.seed,
        arb_tx_hash=builder.arb_hash,
        expected_source=expected,
        creator_hashes=tuple(builder.creator_hashes),
        route=route,
    )
    return segment, truth


def generate_suite(
    base_seed: int, n: int, spec_template: ScenarioSpec
) -> list[tuple[ChainSegment, GroundTruth]]:
    """`n` scenarios seeded base_seed..base_seed+n-1, with disjoint block
    ranges so they can be merged into one segment."""
    if n <= 0:
        raise InfeasibleSpec("suite size must be positive")
    out = []
    for i in range(n):
        seed = base_seed + i
        spec = replace(spec_template, seed=seed)
        start = 1 + i * spec.n_blocks
        out.append(generate(spec, label=f"s{seed}", block_start=start))
    return out


def generate_coefficient_adversarial(
    seed: int, noise_tx_per_block: int = 8, n_blocks: int = 2, block_start: int = 1
) -> tuple[ChainSegment, GroundTruth]:
    """Scenario family where coefficient attribution provably misfires.

    Two creators push the same route pool: the first does the heavy lifting
    in profit terms, the second adds a larger coefficient jump (the jump
    grows quadratically with reserve displacement while extractable profit
    grows roughly linearly). Replay impacts credit the first creator; the
    coefficient method credits the second.
    """
    rng = random.Random(seed)
    label = f"adv{seed}"
    n = 10**6 + rng.randrange(10**4)
    route = _label_route(_route(), label)
    r1_id, r2_id = route.hops[0].pool_id, route.hops[1].pool_id
    pools = {
        r1_id: PoolState(r1_id, BASE_TOKEN, ROUTE_TOKEN, n, n, 0),
        r2_id: PoolState(r2_id, BASE_TOKEN, ROUTE_TOKEN, n, n, 0),
    }
    noise_pool = f"{label}/N0"
    pools[noise_pool] = PoolState(noise_pool, NOISE_TOKENS[0], NOISE_TOKENS[1], n, n, 0)

    def noise_plan() -> _Plan:
        return _Plan(
            kind="noise",
            pool_id=noise_pool,
            token_in=rng.choice(NOISE_TOKENS),
            amount=rng.randint(n // 10**3, n // 10**2),
        )

    plan: list[list[_Plan]] = [
        [noise_plan() for _ in range(noise_tx_per_block)] for _ in range(n_blocks)
    ]
    first = _Plan(kind="creator", pool_id=r2_id, token_in=BASE_TOKEN, amount=2 * n)
    second = _Plan(kind="creator", pool_id=r2_id, token_in=BASE_TOKEN, amount=118 * n // 100)
    blk = rng.randrange(n_blocks)
    at = rng.randint(0, len(plan[blk]))
    plan[blk][at:at] = [first, second]
    plan[-1].append(_Plan(kind="arb"))

    builder = _Builder(label, WorldState(pools=pools), route, rng)
    builder.prices = PriceTable(
        BASE_TOKEN,
        {
            BASE_TOKEN: Fraction(1),
            ROUTE_TOKEN: Fraction(1),
            NOISE_TOKENS[0]: Fraction(1),
            NOISE_TOKENS[1]: Fraction(1),
        },
    )
    blocks = []
    for b, items in enumerate(plan):
        txs = tuple(builder.build(item) for item in items)
        blocks.append(Block(number=block_start + b, txs=txs))
    segment = ChainSegment(initial_state=WorldState(pools=pools), blocks=tuple(blocks))
    assert builder.arb_hash is not None
    truth = GroundTruth(
        seed=seed,
        arb_tx_hash=builder.arb_hash,
        expected_source=ExpectedSource(ExpectedKind.TX, (builder.creator_hashes[0],)),
        creator_hashes=tuple(builder.creator_hashes),
        route=route,
    )
    return segment, truth


def merge_scenarios(
    scenarios: list[tuple[ChainSegment, GroundTruth]],
) -> tuple[ChainSegment, list[GroundTruth]]:
    """Concatenate suite scenarios (disjoint pools, increasing block ranges)
    into one segment plus the list of ground truths."""
    pools: dict[str, PoolState] = {}
    blocks: list[Block] = []
    truths = []
    for segment, truth in scenarios:
        overlap = pools.keys() & segment.initial_state.pools.keys()
        if overlap:
            raise InfeasibleSpec(f"pool id collision while merging: {sorted(overlap)[:3]}")
        pools.update(segment.initial_state.pools)
        blocks.extend(segment.blocks)
        truths.append(truth)
    return ChainSegment(initial_state=WorldState(pools=pools), blocks=tuple(blocks)), truths
