"""Retrospective source attribution for atomic arbitrage events.

Three methods answer "which earlier transaction created this opportunity":

* simulation: counterfactual replay. Find the latest point at which the
  arbitrage would have earned at most a threshold share of its observed
  profit, then credit the transaction with the largest marginal profit
  impact after that point.
* coefficient: track the route's cycle coefficient across candidates and
  credit the largest positive jump (cheap, blind to liquidity depth).
* Shapley: treat candidates as players whose coalition value is the profit
  achievable after replaying exactly that subset, and average marginal
  contributions exactly or by permutation sampling.

A pluggable provider interface admits external attribution feeds; those
results are only ever compared through `agreement`, never used as inputs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from math import factorial
from typing import Mapping, Protocol

from .chain import (
    ChainSegment,
    Position,
    SegmentReplayer,
    Transaction,
    apply_tx,
    pools_touched,
)
from .amm import cycle_coefficient
from .detect import PriceTable, ReplayMode, mev_profit, route_from_tx
from .errors import MismatchedEvent, TooManyCandidates

EXACT_SHAPLEY_LIMIT = 20
SIMULATION_CANDIDATE_CAP = 200


class AttributionMethod(Enum):
    SIMULATION = "simulation"
    COEFFICIENT = "coefficient"
    SHAPLEY_EXACT = "shapley-exact"
    SHAPLEY_MC = "shapley-mc"
    EXTERNAL = "external"


class SourceKind(Enum):
    TX = "tx"
    PRE_EXISTING = "preexisting"
    NONE = "none"


@dataclass(frozen=True)
class Source:
    kind: SourceKind
    tx_hash: str | None = None

    @classmethod
    def tx(cls, tx_hash: str) -> "Source":
        return cls(SourceKind.TX, tx_hash)

    @classmethod
    def pre_existing(cls) -> "Source":
        return cls(SourceKind.PRE_EXISTING)

    @classmethod
    def none(cls) -> "Source":
        return cls(SourceKind.NONE)


@dataclass(frozen=True)
class CandidateSet:
    """Chronological (position, tx_hash) pairs preceding an arbitrage, all of
    which touch at least one pool of its route."""

    entries: tuple[tuple[Position, str], ...]
    arb_position: Position
    depth_used: int

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def hashes(self) -> tuple[str, ...]:
        return tuple(h for _, h in self.entries)


@dataclass(frozen=True)
class AttributionResult:
    method: AttributionMethod
    source: Source
    attributed_value: Fraction
    diagnostics: Mapping[str, object]
    arb_tx_hash: str


@dataclass(frozen=True)
class ShapleyReport:
    """Per-candidate values phi plus the profit already available before the
    window (phi_base); phi values and phi_base sum to total_profit, with the
    deviation recorded as `residual` (identically zero for exact reports)."""

    phi: Mapping[str, Fraction]
    phi_base: Fraction
    total_profit: Fraction
    residual: Fraction
    tied_max: frozenset[str]
    arb_tx_hash: str
    n_samples: int | None = None
    rng_seed: int | None = None


class SourceReportKind(Enum):
    SINGLE_SOURCE = "single-source"
    MULTI_SOURCE = "multi-source"
    PRE_EXISTING = "preexisting"


@dataclass(frozen=True)
class MultiSourceVerdict:
    kind: SourceReportKind
    tx_hashes: frozenset[str]


class AttributionProvider(Protocol):
    """External attribution feed. Implementations must be deterministic for
    fixed underlying data; results carry method = EXTERNAL."""

    def attribute(
        self, segment: ChainSegment, arb_tx_pos: Position
    ) -> AttributionResult | None: ...


@dataclass(frozen=True)
class StaticAttributionProvider:
    """Provider backed by a fixed arb-hash -> source-hash mapping."""

    mapping: Mapping[str, str]

    def attribute(self, segment: ChainSegment, arb_tx_pos: Position) -> AttributionResult | None:
        arb = segment.tx_at(arb_tx_pos)
        src = self.mapping.get(arb.tx_hash)
        if src is None:
            return None
        return AttributionResult(
            method=AttributionMethod.EXTERNAL,
            source=Source.tx(src),
            attributed_value=Fraction(0),
            diagnostics={},
            arb_tx_hash=arb.tx_hash,
        )


def filter_candidates(
    segment: ChainSegment, arb_tx_pos: Position, depth_blocks: int = 100
) -> CandidateSet:
    """Transactions before the arbitrage (within `depth_blocks` earlier blocks)
    whose swaps touch any pool of the arbitrage route."""
    arb_tx = segment.tx_at(arb_tx_pos)
    route = route_from_tx(arb_tx, segment.initial_state)
    route_pools = route.pool_ids
    boundary = segment.window_boundary(arb_tx_pos, depth_blocks)
    entries = tuple(
        (pos, tx.tx_hash)
        for pos, tx in segment.ordered_txs()
        if boundary < pos < arb_tx_pos and pools_touched(tx) & route_pools
    )
    return CandidateSet(entries=entries, arb_position=arb_tx_pos, depth_used=depth_blocks)


def _pre_position(pos: Position) -> Position:
    return Position(pos.block_number, pos.tx_index - 1)


def attribute_simulation(
    segment: ChainSegment,
    arb_tx_pos: Position,
    candidates: CandidateSet,
    prices: PriceTable,
    threshold: Fraction = Fraction(1, 20),
    mode: ReplayMode = ReplayMode.OPTIMAL_AMOUNT,
    replayer: SegmentReplayer | None = None,
) -> AttributionResult:
    """Counterfactual-replay attribution.

    Binary-searches backwards for the latest prefix position at which the
    arbitrage earns at most `threshold` of its observed profit, then walks
    forward computing each candidate's marginal profit impact and credits the
    largest one (ties go to the candidate closest to the arbitrage). Because
    competing arbitrageurs can make the profit profile non-monotone, the
    forward walk doubles as a verification pass: if a later sub-threshold
    point is found, the impact window is re-anchored there, which reproduces
    an exhaustive backward scan exactly.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    replayer = replayer or SegmentReplayer(segment)
    arb_tx = segment.tx_at(arb_tx_pos)
    route = route_from_tx(arb_tx, segment.initial_state)
    route_pools = route.pool_ids

    diagnostics: dict[str, object] = {}
    entries = candidates.entries
    if len(entries) > SIMULATION_CANDIDATE_CAP:
        diagnostics["truncated_candidates"] = len(entries) - SIMULATION_CANDIDATE_CAP
        entries = entries[-SIMULATION_CANDIDATE_CAP:]
    cand_hashes = {h for _, h in entries}

    pi = mev_profit(replayer.state_at(_pre_position(arb_tx_pos)), arb_tx, mode, prices)
    diagnostics["pi"] = pi
    if pi <= 0:
        diagnostics["reason"] = "non-positive observed profit"
        return AttributionResult(
            AttributionMethod.SIMULATION, Source.none(), Fraction(0), diagnostics, arb_tx.tx_hash
        )
    cut = threshold * pi

    boundary = segment.window_boundary(arb_tx_pos, candidates.depth_used)
    cache: dict[Position, Fraction] = {}

    def profit_at(pos: Position) -> Fraction:
        if pos not in cache:
            cache[pos] = mev_profit(replayer.state_at(pos), arb_tx, mode, prices)
        return cache[pos]

    if profit_at(boundary) > cut:
        diagnostics["window_boundary"] = str(boundary)
        return AttributionResult(
            AttributionMethod.SIMULATION,
            Source.pre_existing(),
            profit_at(boundary),
            diagnostics,
            arb_tx.tx_hash,
        )

    # Prefix positions between the window boundary and the arbitrage; the
    # search runs over all of them, not only candidates.
    seq = [boundary] + [
        pos for pos, _ in segment.ordered_txs() if boundary < pos < arb_tx_pos
    ]
    lo, hi = 0, len(seq) - 1
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if profit_at(seq[mid]) <= cut:
            lo = mid
        else:
            hi = mid - 1
    edge = seq[lo]
    diagnostics["edge"] = str(edge)

    # Forward walk with fused verification: profit only moves when a tx
    # touches a route pool, so other txs inherit the previous value.
    state = replayer.state_at(edge)
    prev = profit_at(edge)
    walked: list[tuple[Position, Transaction, Fraction, Fraction]] = []
    last_low = edge
    for pos, tx in segment.ordered_txs():
        if pos <= edge:
            continue
        if pos >= arb_tx_pos:
            break
        state, _ = apply_tx(state, tx)
        profit = mev_profit(state, arb_tx, mode, prices) if pools_touched(tx) & route_pools else prev
        walked.append((pos, tx, prev, profit))
        if profit <= cut:
            last_low = pos
        prev = profit
    if last_low != edge:
        diagnostics["edge"] = str(last_low)

    impacts: dict[str, Fraction] = {}
    best: tuple[Fraction, Position, str] | None = None
    for pos, tx, before, after in walked:
        if pos <= last_low or tx.tx_hash not in cand_hashes:
            continue
        imp = after - before
        impacts[tx.tx_hash] = imp
        if best is None or imp > best[0] or (imp == best[0] and pos > best[1]):
            best = (imp, pos, tx.tx_hash)
    diagnostics["impacts"] = impacts

    if best is None or best[0] <= 0:
        diagnostics["reason"] = "no candidate with positive impact"
        return AttributionResult(
            AttributionMethod.SIMULATION, Source.none(), Fraction(0), diagnostics, arb_tx.tx_hash
        )
    return AttributionResult(
        AttributionMethod.SIMULATION, Source.tx(best[2]), best[0], diagnostics, arb_tx.tx_hash
    )


def attribute_coefficient(
    segment: ChainSegment,
    arb_tx_pos: Position,
    candidates: CandidateSet,
    replayer: SegmentReplayer | None = None,
) -> AttributionResult:
    """Cycle-coefficient attribution.

    Replays only the candidates over the window-boundary state, computing the
    route's fee-exclusive cycle coefficient after each, and credits the
    largest positive jump; ties go to the later candidate. The attributed
    value is the dimensionless coefficient jump itself (reporting layers may
    convert it to a profit estimate). Returns a pre-existing verdict when no
    candidate raised the coefficient but the boundary state already had a
    profitable cycle, and no source otherwise.
    """
    replayer = replayer or SegmentReplayer(segment)
    arb_tx = segment.tx_at(arb_tx_pos)
    route = route_from_tx(arb_tx, segment.initial_state)
    boundary = segment.window_boundary(arb_tx_pos, candidates.depth_used)

    state = replayer.state_at(boundary)
    k_base = cycle_coefficient(state, route)
    k_prev = k_base
    deltas: dict[str, Fraction] = {}
    best: tuple[Fraction, Position, str] | None = None
    for pos, tx_hash in candidates.entries:
        tx = segment.tx_at(pos)
        state, _ = apply_tx(state, tx)
        k_i = cycle_coefficient(state, route)
        delta = k_i - k_prev
        deltas[tx_hash] = delta
        if best is None or delta > best[0] or (delta == best[0] and pos > best[1]):
            best = (delta, pos, tx_hash)
        k_prev = k_i

    diagnostics: dict[str, object] = {"k_base": k_base, "k_final": k_prev, "delta_k": deltas}
    if best is None or best[0] <= 0:
        if k_base > 1:
            return AttributionResult(
                AttributionMethod.COEFFICIENT,
                Source.pre_existing(),
                max(k_base - 1, Fraction(0)),
                diagnostics,
                arb_tx.tx_hash,
            )
        diagnostics["reason"] = "no candidate with positive coefficient jump"
        return AttributionResult(
            AttributionMethod.COEFFICIENT, Source.none(), Fraction(0), diagnostics, arb_tx.tx_hash
        )
    return AttributionResult(
        AttributionMethod.COEFFICIENT, Source.tx(best[2]), best[0], diagnostics, arb_tx.tx_hash
    )


class CoalitionValue:
    """Memoized coalition value function for Shapley attribution.

    The value of a candidate subset is the profit the arbitrage achieves
    after replaying, from the window boundary, every non-candidate window
    transaction plus exactly the chosen candidates, in chronological order.
    Window transactions that cannot influence the route's pools (directly or
    through any chain of shared pools) are dropped up front; the replayed
    worlds are unchanged by construction.
    """

    def __init__(
        self,
        segment: ChainSegment,
        arb_tx_pos: Position,
        candidates: CandidateSet,
        prices: PriceTable,
        mode: ReplayMode = ReplayMode.OPTIMAL_AMOUNT,
        replayer: SegmentReplayer | None = None,
    ):
        replayer = replayer or SegmentReplayer(segment)
        self.arb_tx = segment.tx_at(arb_tx_pos)
        self.prices = prices
        self.mode = mode
        self.n = len(candidates)
        route = route_from_tx(self.arb_tx, segment.initial_state)
        boundary = segment.window_boundary(arb_tx_pos, candidates.depth_used)
        self.base_state = replayer.state_at(boundary)

        index_of = {h: i for i, (_, h) in enumerate(candidates.entries)}
        window = [
            (pos, tx)
            for pos, tx in segment.ordered_txs()
            if boundary < pos < arb_tx_pos
        ]
        relevant = set(route.pool_ids)
        for _, tx in window:
            if tx.tx_hash in index_of:
                relevant |= pools_touched(tx)
        changed = True
        while changed:
            changed = False
            for _, tx in window:
                touched = pools_touched(tx)
                if touched & relevant and not touched <= relevant:
                    relevant |= touched
                    changed = True
        self.steps: list[tuple[Transaction, int | None]] = [
            (tx, index_of.get(tx.tx_hash))
            for _, tx in window
            if tx.tx_hash in index_of or pools_touched(tx) & relevant
        ]
        self._memo: dict[int, Fraction] = {}

    def value(self, mask: int) -> Fraction:
        cached = self._memo.get(mask)
        if cached is not None:
            return cached
        state = self.base_state
        for tx, idx in self.steps:
            if idx is None or mask >> idx & 1:
                state, _ = apply_tx(state, tx)
        v = mev_profit(state, self.arb_tx, self.mode, self.prices)
        self._memo[mask] = v
        return v


def _tied_max(phi: Mapping[str, Fraction]) -> frozenset[str]:
    if not phi:
        return frozenset()
    top = max(phi.values())
    return frozenset(h for h, v in phi.items() if v == top)


def shapley_exact(
    segment: ChainSegment,
    arb_tx_pos: Position,
    candidates: CandidateSet,
    prices: PriceTable,
    mode: ReplayMode = ReplayMode.OPTIMAL_AMOUNT,
    replayer: SegmentReplayer | None = None,
) -> ShapleyReport:
    """Exact Shapley values over all candidate subsets.

    phi_i = sum over subsets S not containing i of
    |S|!(n-1-|S|)!/n! * (V(S + i) - V(S)), in exact rationals; the efficiency
    identity sum(phi) + phi_base = V(all) holds with zero residual.
    """
    n = len(candidates)
    if n >= EXACT_SHAPLEY_LIMIT:
        raise TooManyCandidates(f"{n} candidates; exact enumeration bounded at {EXACT_SHAPLEY_LIMIT}")
    engine = CoalitionValue(segment, arb_tx_pos, candidates, prices, mode, replayer)
    values = [engine.value(mask) for mask in range(1 << n)]

    hashes = list(candidates.hashes)
    phi = {h: Fraction(0) for h in hashes}
    if n:
        fact = [factorial(i) for i in range(n + 1)]
        weights = [Fraction(fact[s] * fact[n - 1 - s], fact[n]) for s in range(n)]
        popcount = [0] * (1 << n)
        for mask in range(1, 1 << n):
            popcount[mask] = popcount[mask >> 1] + (mask & 1)
        for mask in range((1 << n) - 1):  # the full mask contributes no marginals
            w = weights[popcount[mask]]
            base = values[mask]
            for i in range(n):
                if not mask >> i & 1:
                    phi[hashes[i]] += w * (values[mask | 1 << i] - base)

    phi_base = values[0]
    total = values[-1]
    residual = sum(phi.values(), Fraction(0)) + phi_base - total
    return ShapleyReport(
        phi=phi,
        phi_base=phi_base,
        total_profit=total,
        residual=residual,
        tied_max=_tied_max(phi),
        arb_tx_hash=engine.arb_tx.tx_hash,
    )


def shapley_mc(
    segment: ChainSegment,
    arb_tx_pos: Position,
    candidates: CandidateSet,
    prices: PriceTable,
    n_samples: int = 1000,
    seed: int = 0,
    mode: ReplayMode = ReplayMode.OPTIMAL_AMOUNT,
    replayer: SegmentReplayer | None = None,
) -> ShapleyReport:
    """Monte Carlo Shapley estimate from `n_samples` random candidate
    permutations, deterministic for a fixed seed. Coalition values are
    memoized across samples, so the replay cost is bounded by the number of
    distinct subsets visited.

    Permutations are drawn in antithetic pairs (every second sample is the
    reverse of the previous draw). The reverse of a uniform permutation is
    itself uniform, so each sample's marginal accumulation is unchanged and
    the estimate stays unbiased; pairing the two roughly cancels the
    position-dependence of each candidate's marginal, cutting the sampling
    error severalfold at the same cost."""
    if len(candidates) == 0:
        raise ValueError("shapley_mc requires a non-empty candidate set")
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    n = len(candidates)
    engine = CoalitionValue(segment, arb_tx_pos, candidates, prices, mode, replayer)
    rng = random.Random(seed)
    sums = [Fraction(0)] * n
    order = list(range(n))
    empty = engine.value(0)
    for j in range(n_samples):
        if j % 2 == 1:
            order.reverse()
        else:
            rng.shuffle(order)
        mask = 0
        prev = empty
        for i in order:
            mask |= 1 << i
            v = engine.value(mask)
            sums[i] += v - prev
            prev = v
    hashes = list(candidates.hashes)
    phi = {hashes[i]: sums[i] / n_samples for i in range(n)}
    phi_base = empty
    total = engine.value((1 << n) - 1)
    residual = sum(phi.values(), Fraction(0)) + phi_base - total
    return ShapleyReport(
        phi=phi,
        phi_base=phi_base,
        total_profit=total,
        residual=residual,
        tied_max=_tied_max(phi),
        arb_tx_hash=engine.arb_tx.tx_hash,
        n_samples=n_samples,
        rng_seed=seed,
    )


def multi_source_report(
    report: ShapleyReport,
    dominance: Fraction = Fraction(7, 10),
    mc_tie_rtol: Fraction = Fraction(1, 20),
) -> MultiSourceVerdict:
    """Classify a Shapley report as single-source, multi-source, or
    pre-existing.

    Pre-existing when no candidate has positive value (the base state carries
    the profit). Multi-source when the maximum is tied -- exactly for exact
    reports, within `mc_tie_rtol` of the top value for sampled reports -- or
    when the top candidate holds no more than `dominance` of all positive
    value. Single-source otherwise.
    """
    positive = {h: v for h, v in report.phi.items() if v > 0}
    if not positive:
        return MultiSourceVerdict(SourceReportKind.PRE_EXISTING, frozenset())
    top = max(positive.values())
    band = Fraction(0) if report.n_samples is None else top * mc_tie_rtol
    tied = frozenset(h for h, v in report.phi.items() if top - v <= band)
    if len(tied) > 1:
        return MultiSourceVerdict(SourceReportKind.MULTI_SOURCE, tied)
    if top > dominance * sum(positive.values()):
        return MultiSourceVerdict(SourceReportKind.SINGLE_SOURCE, tied)
    return MultiSourceVerdict(SourceReportKind.MULTI_SOURCE, frozenset(positive))


def attribution_result_from_report(
    report: ShapleyReport, method: AttributionMethod
) -> AttributionResult:
    """Flatten a Shapley report into the common result record: the top
    positive candidate (later candidates win exact ties), or pre-existing
    when the base state carries all value."""
    diagnostics: dict[str, object] = {
        "phi_base": report.phi_base,
        "residual": report.residual,
        "tied_max": sorted(report.tied_max),
    }
    verdict = multi_source_report(report)
    diagnostics["verdict"] = verdict.kind.value
    if verdict.kind is SourceReportKind.PRE_EXISTING:
        return AttributionResult(
            method, Source.pre_existing(), report.phi_base, diagnostics, report.arb_tx_hash
        )
    top = max(report.phi.values())
    chosen = [h for h, v in report.phi.items() if v == top][-1]
    return AttributionResult(method, Source.tx(chosen), top, diagnostics, report.arb_tx_hash)


def agreement(a: AttributionResult, b: AttributionResult) -> bool:
    """True when both results name the same transaction or both say the
    opportunity pre-existed."""
    if a.arb_tx_hash != b.arb_tx_hash:
        raise MismatchedEvent(f"results refer to {a.arb_tx_hash} and {b.arb_tx_hash}")
    if a.source.kind is SourceKind.TX and b.source.kind is SourceKind.TX:
        return a.source.tx_hash == b.source.tx_hash
    return a.source.kind is SourceKind.PRE_EXISTING and b.source.kind is SourceKind.PRE_EXISTING
