"""Command-line pipeline: generate scenarios, detect atomic arbitrage,
attribute sources, evaluate against ground truth, aggregate creation stats.

Exit codes: 0 success, 1 configuration error, 2 data error. All output files
are a pure function of (inputs, flags, seed); wall-clock timings go to
stderr only.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .attribution import (
    AttributionMethod,
    AttributionResult,
    attribute_coefficient,
    attribute_simulation,
    attribution_result_from_report,
    filter_candidates,
    shapley_exact,
    shapley_mc,
)
from .chain import Position, SegmentReplayer, apply_tx
from .detect import ReplayMode, classify_from_delta, mev_profit
from .errors import ArbtraceError, GroundTruthMismatch, InfeasibleSpec, ParseError
from .io import (
    dump_json,
    fraction_parts,
    jsonable,
    read_ground_truth_file,
    read_prices_file,
    read_records,
    read_segment,
    write_blocks_file,
    write_ground_truth_file,
    write_prices_file,
    write_state_file,
)
from .scenarios import (
    ExpectedKind,
    ScenarioSpec,
    generate_coefficient_adversarial,
    generate_suite,
    merge_scenarios,
    uniform_prices,
)

METHOD_ORDER = ("simulation", "coefficient", "shapley-exact", "shapley-mc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; config errors are 1
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


@dataclass(frozen=True)
class RunConfig:
    methods: tuple[str, ...]
    depth_blocks: int = 100
    threshold: Fraction = Fraction(1, 20)
    n_samples: int = 1000
    seed: int = 0
    mode: ReplayMode = ReplayMode.OPTIMAL_AMOUNT
    jobs: int = 1

    def __post_init__(self):
        if not self.methods:
            raise InfeasibleSpec("select at least one attribution method")
        for m in self.methods:
            if m not in METHOD_ORDER:
                raise InfeasibleSpec(f"unknown method {m!r}")
        if not 0 < self.threshold < 1:
            raise InfeasibleSpec("threshold must be in (0, 1)")


def _detect_events(segment, prices):
    """Replay once, classifying every tx against its pre-state; returns
    (position, tx, classification) for atomic arbitrages, in consensus order."""
    events = []
    state = segment.initial_state
    for pos, tx in segment.ordered_txs():
        new_state, delta = apply_tx(state, tx)
        cls = classify_from_delta(tx, state, delta, prices)
        if cls.is_atomic_arb:
            events.append((pos, tx, cls))
        state = new_state
    return events


def _detect_records(segment, prices):
    records = []
    for pos, tx, cls in _detect_events(segment, prices):
        gross_n, gross_d = fraction_parts(cls.gross_value)
        profit_n, profit_d = fraction_parts(cls.profit)
        records.append(
            {
                "tx_hash": tx.tx_hash,
                "block": str(pos.block_number),
                "tx_index": str(pos.tx_index),
                "sender": tx.sender,
                "protocol_tag": tx.protocol_tag,
                "n_swaps": str(cls.n_swaps),
                "net_changes": {t: str(v) for t, v in sorted(cls.net_changes.items())},
                "gross_num": gross_n,
                "gross_den": gross_d,
                "profit_num": profit_n,
                "profit_den": profit_d,
            }
        )
    return records


def _result_record(res: AttributionResult, pos: Position, pi: Fraction, extra: dict) -> dict:
    source: dict = {"kind": res.source.kind.value}
    if res.source.tx_hash is not None:
        source["tx_hash"] = res.source.tx_hash
    value_n, value_d = fraction_parts(res.attributed_value)
    pi_n, pi_d = fraction_parts(pi)
    rec = {
        "arb_tx_hash": res.arb_tx_hash,
        "block": str(pos.block_number),
        "tx_index": str(pos.tx_index),
        "method": res.method.value,
        "source": source,
        "attributed_value_num": value_n,
        "attributed_value_den": value_d,
        "pi_num": pi_n,
        "pi_den": pi_d,
        "diagnostics": jsonable(res.diagnostics),
    }
    rec.update(extra)
    return rec


def _attribute_event(segment, replayer, prices, cfg: RunConfig, pos: Position, ordinal: int):
    """All requested method records for one event; errors become records."""
    arb_tx = segment.tx_at(pos)
    records = []
    timings = {}
    try:
        candidates = filter_candidates(segment, pos, cfg.depth_blocks)
        pre = Position(pos.block_number, pos.tx_index - 1)
        pi = mev_profit(replayer.state_at(pre), arb_tx, cfg.mode, prices)
    except ArbtraceError as exc:
        for method in cfg.methods:
            records.append(
                {
                    "arb_tx_hash": arb_tx.tx_hash,
                    "block": str(pos.block_number),
                    "tx_index": str(pos.tx_index),
                    "method": method,
                    "error": type(exc).__name__,
                    "detail": str(exc),
                }
            )
        return records, timings

    mc_seed = cfg.seed + ordinal
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            extra: dict = {}
            if method == "simulation":
                res = attribute_simulation(
                    segment, pos, candidates, prices, cfg.threshold, cfg.mode, replayer
                )
            elif method == "coefficient":
                res = attribute_coefficient(segment, pos, candidates, replayer)
            elif method == "shapley-exact":
                report = shapley_exact(segment, pos, candidates, prices, cfg.mode, replayer)
                res = attribution_result_from_report(report, AttributionMethod.SHAPLEY_EXACT)
            else:  # shapley-mc; empty candidate sets degenerate to the exact report
                if len(candidates) == 0:
                    report = shapley_exact(segment, pos, candidates, prices, cfg.mode, replayer)
                else:
                    report = shapley_mc(
                        segment, pos, candidates, prices, cfg.n_samples, mc_seed, cfg.mode, replayer
                    )
                res = attribution_result_from_report(report, AttributionMethod.SHAPLEY_MC)
                extra = {"seed": str(mc_seed), "n_samples": str(cfg.n_samples)}
            records.append(_result_record(res, pos, pi, extra))
        except ArbtraceError as exc:
            records.append(
                {
                    "arb_tx_hash": arb_tx.tx_hash,
                    "block": str(pos.block_number),
                    "tx_index": str(pos.tx_index),
                    "method": method,
                    "error": type(exc).__name__,
                    "detail": str(exc),
                }
            )
        timings[method] = timings.get(method, 0.0) + time.perf_counter() - t0
    return records, timings


_WORKER: dict = {}


def _init_worker(blocks_path: str, state_path: str, prices_path: str, cfg: RunConfig) -> None:
    segment = read_segment(blocks_path, state_path)
    _WORKER["segment"] = segment
    _WORKER["prices"] = read_prices_file(prices_path)
    _WORKER["replayer"] = SegmentReplayer(segment)
    _WORKER["cfg"] = cfg


def _worker_run(event: tuple[int, int, int]):
    block_number, tx_index, ordinal = event
    records, timings = _attribute_event(
        _WORKER["segment"],
        _WORKER["replayer"],
        _WORKER["prices"],
        _WORKER["cfg"],
        Position(block_number, tx_index),
        ordinal,
    )
    return ordinal, records, timings


def _run_attribution(blocks_path, state_path, prices_path, cfg: RunConfig):
    """Detect events and attribute each with every configured method.

    Events are independent; with jobs > 1 they fan out to worker processes.
    Output order is canonical (block, index, method) regardless of scheduling.
    """
    segment = read_segment(blocks_path, state_path)
    prices = read_prices_file(prices_path)
    events = [(pos, tx) for pos, tx, _ in _detect_events(segment, prices)]
    jobs = [(pos.block_number, pos.tx_index, i) for i, (pos, _) in enumerate(events)]

    all_records: list[tuple[int, list[dict]]] = []
    totals: dict[str, float] = {}
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(
            max_workers=cfg.jobs,
            initializer=_init_worker,
            initargs=(str(blocks_path), str(state_path), str(prices_path), cfg),
        ) as pool:
            for ordinal, records, timings in pool.map(_worker_run, jobs, chunksize=8):
                all_records.append((ordinal, records))
                for m, t in timings.items():
                    totals[m] = totals.get(m, 0.0) + t
    else:
        replayer = SegmentReplayer(segment)
        for block_number, tx_index, ordinal in jobs:
            records, timings = _attribute_event(
                segment, replayer, prices, cfg, Position(block_number, tx_index), ordinal
            )
            all_records.append((ordinal, records))
            for m, t in timings.items():
                totals[m] = totals.get(m, 0.0) + t

    all_records.sort(key=lambda item: item[0])
    flat = []
    for _, records in all_records:
        flat.extend(sorted(records, key=lambda r: METHOD_ORDER.index(r["method"])))
    mean_ms = {m: 1000.0 * t / max(len(jobs), 1) for m, t in sorted(totals.items())}
    return flat, len(jobs), mean_ms


def _write_lines(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(dump_json(rec) + "\n")


# --- evaluation --------------------------------------------------------------


def _record_correct(rec: dict, kind: ExpectedKind, hashes: tuple[str, ...]) -> bool:
    if "error" in rec:
        return False
    source = rec["source"]
    if kind is ExpectedKind.PRE_EXISTING:
        return source["kind"] == "preexisting"
    if source["kind"] != "tx":
        return False
    if kind is ExpectedKind.TX:
        return source.get("tx_hash") == hashes[0]
    # tied: any tied member counts, as does reporting exactly the tied set
    if source.get("tx_hash") in hashes:
        return True
    tied = rec.get("diagnostics", {}).get("tied_max")
    return tied is not None and set(tied) == set(hashes)


def _evaluate(records: list[dict], truths: list[dict], methods) -> dict:
    by_event: dict[tuple[str, str], dict] = {}
    for rec in records:
        by_event.setdefault((rec["arb_tx_hash"], rec["method"]), rec)
    summary: dict = {
        "note": "scored against synthetic injected ground truth, not live consensus",
        "methods": {},
    }
    for method in methods:
        correct = total = covered = 0
        for truth in truths:
            rec = by_event.get((truth["arb_tx_hash"], method))
            if rec is None:
                raise GroundTruthMismatch(
                    f"no {method} result for arbitrage {truth['arb_tx_hash']}"
                )
            total += 1
            expected_hashes = truth["expected_hashes"] or truth["creators"]
            if _record_correct(rec, truth["expected_kind"], expected_hashes):
                correct += 1
            if "error" not in rec and rec["source"]["kind"] in ("tx", "preexisting"):
                covered += 1
        summary["methods"][method] = {
            "correct": correct,
            "total": total,
            "accuracy": f"{correct}/{total}" if total else "0/0",
            "coverage": f"{covered}/{total}" if total else "0/0",
        }
    return summary


# --- aggregation -------------------------------------------------------------


def _aggregate(records: list[dict], segment) -> tuple[dict, list[str]]:
    """Creation totals by sender/protocol, concentration shares, the
    executed-arb-to-opportunity ratio, per-method coverage, and the pairwise
    agreement matrix. Values stay exact until rendering."""
    methods = sorted({r["method"] for r in records})
    report: dict = {"methods": {}}
    csv_rows = ["method,group_type,group,total_num,total_den,events"]
    for method in methods:
        mrecs = [r for r in records if r["method"] == method]
        attributed = [r for r in mrecs if "error" not in r and r["source"]["kind"] == "tx"]
        by_sender: dict[str, Fraction] = {}
        by_protocol: dict[str, Fraction] = {}
        by_source: dict[str, Fraction] = {}
        count_by_sender: dict[str, int] = {}
        for rec in attributed:
            value = Fraction(int(rec["attributed_value_num"]), int(rec["attributed_value_den"]))
            src_hash = rec["source"]["tx_hash"]
            src_pos = segment.position_of(src_hash)
            src_tx = segment.tx_at(src_pos)
            tag = src_tx.protocol_tag or "(untagged)"
            by_sender[src_tx.sender] = by_sender.get(src_tx.sender, Fraction(0)) + value
            count_by_sender[src_tx.sender] = count_by_sender.get(src_tx.sender, 0) + 1
            by_protocol[tag] = by_protocol.get(tag, Fraction(0)) + value
            by_source[src_hash] = by_source.get(src_hash, Fraction(0)) + value

        total_value = sum(by_sender.values(), Fraction(0))
        shares = {}
        if by_source and total_value > 0:
            ranked = sorted(by_source.values(), reverse=True)
            for pct in (1, 5, 10):
                top_n = max(1, -(-len(ranked) * pct // 100))  # ceil
                share = sum(ranked[:top_n], Fraction(0)) / total_value
                shares[f"top_{pct}pct"] = f"{share.numerator}/{share.denominator}"
        ratio = None
        if by_source:
            ratio = Fraction(len(attributed), len(by_source))
        covered = sum(
            1 for r in mrecs if "error" not in r and r["source"]["kind"] in ("tx", "preexisting")
        )
        report["methods"][method] = {
            "events": len(mrecs),
            "attributed_events": len(attributed),
            "coverage": f"{covered}/{len(mrecs)}" if mrecs else "0/0",
            "distinct_sources": len(by_source),
            "arb_to_opportunity_ratio": (
                f"{ratio.numerator}/{ratio.denominator}" if ratio is not None else None
            ),
            "total_value": f"{total_value.numerator}/{total_value.denominator}",
            "value_shares": shares,
            "by_sender": {
                s: {"total": f"{v.numerator}/{v.denominator}", "events": count_by_sender[s]}
                for s, v in sorted(by_sender.items())
            },
            "by_protocol": {
                p: f"{v.numerator}/{v.denominator}" for p, v in sorted(by_protocol.items())
            },
        }
        for sender, value in sorted(by_sender.items()):
            csv_rows.append(
                f"{method},sender,{sender},{value.numerator},{value.denominator},{count_by_sender[sender]}"
            )
        for tag, value in sorted(by_protocol.items()):
            csv_rows.append(f"{method},protocol,{tag},{value.numerator},{value.denominator},")

    matrix: dict[str, dict[str, str]] = {}
    for m1 in methods:
        matrix[m1] = {}
        for m2 in methods:
            agree = common = 0
            r1 = {r["arb_tx_hash"]: r for r in records if r["method"] == m1 and "error" not in r}
            r2 = {r["arb_tx_hash"]: r for r in records if r["method"] == m2 and "error" not in r}
            for h in r1.keys() & r2.keys():
                s1, s2 = r1[h]["source"], r2[h]["source"]
                common += 1
                if s1["kind"] == "tx" and s2["kind"] == "tx":
                    agree += s1.get("tx_hash") == s2.get("tx_hash")
                else:
                    agree += s1["kind"] == "preexisting" and s2["kind"] == "preexisting"
            matrix[m1][m2] = f"{agree}/{common}" if common else "0/0"
    report["agreement_matrix"] = matrix
    return report, csv_rows


# --- commands ----------------------------------------------------------------


def _config_from_args(args) -> RunConfig:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    return RunConfig(
        methods=methods,
        depth_blocks=args.depth,
        threshold=Fraction(args.threshold),
        n_samples=args.samples,
        seed=args.seed,
        mode=ReplayMode.OPTIMAL_AMOUNT if args.mode == "optimal" else ReplayMode.FIXED_AMOUNTS,
        jobs=args.jobs,
    )


def cmd_detect(args) -> int:
    segment = read_segment(args.blocks, args.state)
    prices = read_prices_file(args.prices)
    records = _detect_records(segment, prices)
    _write_lines(args.out, records)
    print(f"detect: {len(records)} atomic arbitrage event(s) -> {args.out}", file=sys.stderr)
    return 0


def cmd_attribute(args) -> int:
    cfg = _config_from_args(args)
    records, n_events, mean_ms = _run_attribution(args.blocks, args.state, args.prices, cfg)
    _write_lines(args.out, records)
    timing = ", ".join(f"{m}={v:.2f}ms" for m, v in mean_ms.items())
    print(
        f"attribute: {n_events} event(s), {len(records)} record(s) -> {args.out}"
        + (f" [mean/event: {timing}]" if timing else ""),
        file=sys.stderr,
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    truths = read_ground_truth_file(args.ground_truth)
    t0 = time.perf_counter()
    records, n_events, mean_ms = _run_attribution(args.blocks, args.state, args.prices, cfg)
    elapsed = time.perf_counter() - t0
    summary = _evaluate(records, truths, cfg.methods)
    Path(args.out).write_text(dump_json(summary) + "\n")
    timing = ", ".join(f"{m}={v:.2f}ms" for m, v in mean_ms.items())
    print(
        f"evaluate: {len(truths)} scenario(s), {n_events} event(s) in {elapsed:.2f}s"
        + (f" [mean/event: {timing}]" if timing else ""),
        file=sys.stderr,
    )
    for method, stats in summary["methods"].items():
        print(f"  {method}: accuracy {stats['accuracy']}, coverage {stats['coverage']}", file=sys.stderr)
    return 0


def cmd_aggregate(args) -> int:
    segment = read_segment(args.blocks, args.state)
    records = read_records(args.results)
    report, csv_rows = _aggregate(records, segment)
    Path(args.out).write_text(dump_json(report) + "\n")
    print("\n".join(csv_rows))
    return 0


def cmd_generate(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.suite < 0:
        raise InfeasibleSpec("suite size must be non-negative")
    if args.suite == 0:
        scenarios = []
    elif args.adversarial:
        scenarios = [
            generate_coefficient_adversarial(args.seed + i, block_start=1 + 2 * i)
            for i in range(args.suite)
        ]
    else:
        template = ScenarioSpec(
            seed=args.seed,
            n_pools=args.pools,
            n_blocks=args.blocks_per_scenario,
            noise_tx_per_block=args.noise,
            n_creators=args.creators,
            competing_arbs=args.competitors,
            imbalance_magnitude=Fraction(args.imbalance),
            fee_ppm=args.fee_ppm,
            preexisting=args.preexisting,
        )
        scenarios = generate_suite(args.seed, args.suite, template)
    segment, truths = merge_scenarios(scenarios)
    write_blocks_file(outdir / "blocks.jsonl", segment.blocks)
    write_state_file(outdir / "state.json", segment.initial_state)
    write_prices_file(outdir / "prices.json", uniform_prices(segment))
    write_ground_truth_file(outdir / "ground_truth.json", truths)
    print(
        f"generate: {len(truths)} scenario(s), {len(segment.blocks)} block(s) -> {outdir}",
        file=sys.stderr,
    )
    return 0


def _add_io_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--blocks", required=True, help="line-delimited block file")
    p.add_argument("--state", required=True, help="initial pool state file")
    p.add_argument("--prices", required=True, help="price table file")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--methods", default="simulation", help="comma list: " + ",".join(METHOD_ORDER))
    p.add_argument("--depth", type=int, default=100, help="lookback depth in blocks")
    p.add_argument("--threshold", default="0.05", help="edge threshold as decimal or num/den")
    p.add_argument("--samples", type=int, default=1000, help="Monte Carlo permutation samples")
    p.add_argument("--seed", type=int, default=0, help="base RNG seed")
    p.add_argument("--mode", choices=("fixed", "optimal"), default="optimal")
    p.add_argument("--jobs", type=int, default=1, help="parallel event workers")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="arbtrace", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", parents=[], help="classify atomic arbitrage transactions")
    _add_io_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("attribute", help="attribute detected events to source transactions")
    _add_io_flags(p)
    _add_run_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("evaluate", help="score methods against a ground-truth file")
    _add_io_flags(p)
    _add_run_flags(p)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("aggregate", help="aggregate attribution results")
    p.add_argument("--blocks", required=True)
    p.add_argument("--state", required=True)
    p.add_argument("--results", required=True, help="attribution record stream")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("generate", help="write synthetic scenario files")
    p.add_argument("--outdir", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--suite", type=int, default=1, help="number of scenarios")
    p.add_argument("--pools", type=int, default=4)
    p.add_argument("--blocks-per-scenario", type=int, default=3)
    p.add_argument("--noise", type=int, default=10)
    p.add_argument("--creators", type=int, default=1)
    p.add_argument("--competitors", type=int, default=0)
    p.add_argument("--imbalance", default="1.12", help="target cycle coefficient after creators")
    p.add_argument("--fee-ppm", type=int, default=3000)
    p.add_argument("--preexisting", action="store_true")
    p.add_argument("--adversarial", action="store_true", help="coefficient-blindness family")
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleSpec as exc:
        print(f"arbtrace: config error: {exc}", file=sys.stderr)
        return 1
    except ParseError as exc:
        print(f"arbtrace: data error: {exc}", file=sys.stderr)
        return 2
    except ArbtraceError as exc:
        print(f"arbtrace: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"arbtrace: config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
