"""Deterministic AMM replay, atomic-arbitrage detection, and source attribution."""

from .amm import (
    PPM,
    ArbRoute,
    PoolState,
    RouteHop,
    SwapResult,
    TokenId,
    cycle_coefficient,
    spot_rate,
    swap_exact_in,
)
from .chain import (
    Block,
    ChainSegment,
    Position,
    SegmentReplayer,
    StateDelta,
    SwapIntent,
    Transaction,
    WorldState,
    apply_delta,
    apply_tx,
    pools_touched,
    replay_prefix,
    replay_with_subset,
    state_digest,
)
from .detect import (
    ArbClassification,
    Criterion,
    PriceTable,
    ReplayMode,
    classify,
    mev_profit,
    optimal_arbitrage,
    profit_of_route,
    route_from_tx,
)
from .attribution import (
    AttributionMethod,
    AttributionProvider,
    AttributionResult,
    CandidateSet,
    CoalitionValue,
    MultiSourceVerdict,
    ShapleyReport,
    Source,
    SourceKind,
    SourceReportKind,
    StaticAttributionProvider,
    agreement,
    attribute_coefficient,
    attribute_simulation,
    attribution_result_from_report,
    filter_candidates,
    multi_source_report,
    shapley_exact,
    shapley_mc,
)
from .scenarios import (
    ExpectedKind,
    ExpectedSource,
    GroundTruth,
    ScenarioSpec,
    generate,
    generate_coefficient_adversarial,
    generate_suite,
    merge_scenarios,
    uniform_prices,
)
from . import errors

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
