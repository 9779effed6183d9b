"""End-to-end CLI behavior: commands, determinism, exit codes, schemas."""

import json

import pytest

from arbtrace.cli import main
from arbtrace.io import read_records


def run(argv):
    return main(argv)


@pytest.fixture
def suite_dir(tmp_path):
    out = tmp_path / "suite"
    assert run([
        "generate", "--outdir", str(out), "--seed", "42", "--suite", "4",
        "--competitors", "1", "--noise", "6",
    ]) == 0
    return out


def io_flags(d):
    return [
        "--blocks", str(d / "blocks.jsonl"),
        "--state", str(d / "state.json"),
        "--prices", str(d / "prices.json"),
    ]


class TestGenerateCommand:
    def test_same_seed_identical_files(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(["generate", "--outdir", str(out), "--seed", "9", "--suite", "2"]) == 0
        for name in ("blocks.jsonl", "state.json", "prices.json", "ground_truth.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_zero_suite_writes_valid_empty_files(self, tmp_path):
        out = tmp_path / "empty"
        assert run(["generate", "--outdir", str(out), "--suite", "0"]) == 0
        assert (out / "blocks.jsonl").read_text() == ""
        truths = json.loads((out / "ground_truth.json").read_text())
        assert truths["scenarios"] == []
        det = tmp_path / "det.jsonl"
        assert run(["detect", *io_flags(out), "--out", str(det)]) == 0
        assert read_records(det) == []

    def test_negative_suite_is_config_error(self, tmp_path):
        assert run(["generate", "--outdir", str(tmp_path / "x"), "--suite", "-1"]) == 1

    def test_adversarial_files(self, tmp_path):
        out = tmp_path / "adv"
        assert run(["generate", "--outdir", str(out), "--adversarial", "--suite", "2"]) == 0
        truths = json.loads((out / "ground_truth.json").read_text())
        assert len(truths["scenarios"]) == 2


class TestDetectCommand:
    def test_detections_match_suite_shape(self, suite_dir, tmp_path):
        out = tmp_path / "det.jsonl"
        assert run(["detect", *io_flags(suite_dir), "--out", str(out)]) == 0
        records = read_records(out)
        # one competitor plus the final arbitrage per scenario
        assert len(records) == 8
        for rec in records:
            assert int(rec["profit_num"]) > 0
            assert int(rec["n_swaps"]) >= 2

    def test_empty_blocks_file(self, suite_dir, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        out = tmp_path / "det.jsonl"
        assert run([
            "detect", "--blocks", str(empty),
            "--state", str(suite_dir / "state.json"),
            "--prices", str(suite_dir / "prices.json"),
            "--out", str(out),
        ]) == 0
        assert read_records(out) == []

    def test_missing_file_is_data_error(self, suite_dir, tmp_path):
        assert run([
            "detect", "--blocks", str(tmp_path / "nope.jsonl"),
            "--state", str(suite_dir / "state.json"),
            "--prices", str(suite_dir / "prices.json"),
            "--out", str(tmp_path / "o.jsonl"),
        ]) == 2

    def test_bad_flag_is_config_error(self):
        with pytest.raises(SystemExit) as exc:
            run(["detect", "--no-such-flag"])
        assert exc.value.code == 1


class TestAttributeCommand:
    def test_record_schema_and_cardinality(self, suite_dir, tmp_path):
        out = tmp_path / "res.jsonl"
        assert run([
            "attribute", *io_flags(suite_dir),
            "--methods", "simulation,coefficient", "--out", str(out), "--seed", "3",
        ]) == 0
        records = read_records(out)
        assert len(records) == 16  # 8 events x 2 methods
        rec = records[0]
        for key in (
            "arb_tx_hash", "block", "tx_index", "method", "source",
            "attributed_value_num", "attributed_value_den", "pi_num", "pi_den",
            "diagnostics",
        ):
            assert key in rec
        assert rec["source"]["kind"] in ("tx", "preexisting", "none")

    def test_byte_identical_reruns(self, suite_dir, tmp_path):
        outs = []
        for name in ("r1.jsonl", "r2.jsonl"):
            out = tmp_path / name
            assert run([
                "attribute", *io_flags(suite_dir),
                "--methods", "simulation,coefficient,shapley-exact,shapley-mc",
                "--samples", "64", "--seed", "11", "--out", str(out),
            ]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_jobs_do_not_change_output(self, suite_dir, tmp_path):
        outs = []
        for jobs, name in (("1", "serial.jsonl"), ("2", "parallel.jsonl")):
            out = tmp_path / name
            assert run([
                "attribute", *io_flags(suite_dir),
                "--methods", "simulation,shapley-mc", "--samples", "32",
                "--seed", "5", "--jobs", jobs, "--out", str(out),
            ]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_canonical_order(self, suite_dir, tmp_path):
        out = tmp_path / "res.jsonl"
        assert run([
            "attribute", *io_flags(suite_dir),
            "--methods", "coefficient,simulation", "--out", str(out),
        ]) == 0
        records = read_records(out)
        keys = [
            (int(r["block"]), int(r["tx_index"]), r["method"]) for r in records
        ]
        # ordered by event, then by fixed method order (simulation first)
        events = [k[:2] for k in keys[::2]]
        assert events == sorted(events)
        assert all(keys[i][2] == "simulation" for i in range(0, len(keys), 2))

    def test_unknown_method_is_config_error(self, suite_dir, tmp_path):
        assert run([
            "attribute", *io_flags(suite_dir),
            "--methods", "psychic", "--out", str(tmp_path / "r.jsonl"),
        ]) == 1

    def test_exact_shapley_guard_records_error_and_continues(self, tmp_path):
        # 25 route-touching candidates exceed the exact-enumeration bound
        from arbtrace import (
            ArbRoute, Block, ChainSegment, PoolState, RouteHop, SwapIntent,
            Transaction, WorldState, apply_tx, optimal_arbitrage,
        )
        from arbtrace.io import write_blocks_file, write_prices_file, write_state_file
        from arbtrace.scenarios import uniform_prices
        from arbtrace import swap_exact_in

        n = 10**9
        pools = {
            "P1": PoolState("P1", "BASE", "TKA", n, n, 0),
            "P2": PoolState("P2", "BASE", "TKA", n, n, 0),
        }
        state = WorldState(pools=pools)
        txs = [
            Transaction(f"t{i:02d}", "m", (SwapIntent("P2", "BASE", 40_000_000),))
            for i in range(25)
        ]
        cur = state
        for tx in txs:
            cur, _ = apply_tx(cur, tx)
        route = ArbRoute((RouteHop("P1", "BASE", "TKA"), RouteHop("P2", "TKA", "BASE")))
        prices = uniform_prices(ChainSegment(state, (Block(1, tuple(txs)),)))
        amount, _ = optimal_arbitrage(cur, route, prices)
        out1 = swap_exact_in(cur.pool("P1"), "BASE", amount).amount_out
        arb = Transaction(
            "arb", "s",
            (SwapIntent("P1", "BASE", amount), SwapIntent("P2", "TKA", out1)),
        )
        seg = ChainSegment(state, (Block(1, tuple(txs + [arb])),))
        write_blocks_file(tmp_path / "blocks.jsonl", seg.blocks)
        write_state_file(tmp_path / "state.json", seg.initial_state)
        write_prices_file(tmp_path / "prices.json", prices)
        out = tmp_path / "res.jsonl"
        assert run([
            "attribute",
            "--blocks", str(tmp_path / "blocks.jsonl"),
            "--state", str(tmp_path / "state.json"),
            "--prices", str(tmp_path / "prices.json"),
            "--methods", "shapley-exact,simulation", "--out", str(out),
        ]) == 0
        records = read_records(out)
        errors = [r for r in records if "error" in r]
        assert len(errors) == 1 and errors[0]["error"] == "TooManyCandidates"
        ok = [r for r in records if "error" not in r]
        assert len(ok) == 1 and ok[0]["method"] == "simulation"


class TestEvaluateCommand:
    def test_full_accuracy_on_clean_suite(self, suite_dir, tmp_path):
        out = tmp_path / "eval.json"
        assert run([
            "evaluate", *io_flags(suite_dir),
            "--ground-truth", str(suite_dir / "ground_truth.json"),
            "--methods", "simulation,coefficient,shapley-exact,shapley-mc",
            "--samples", "128", "--out", str(out),
        ]) == 0
        summary = json.loads(out.read_text())
        for method, stats in summary["methods"].items():
            assert stats["correct"] == stats["total"] == 4, method
        assert "synthetic" in summary["note"]

    def test_determinism(self, suite_dir, tmp_path):
        outs = []
        for name in ("e1.json", "e2.json"):
            out = tmp_path / name
            assert run([
                "evaluate", *io_flags(suite_dir),
                "--ground-truth", str(suite_dir / "ground_truth.json"),
                "--methods", "simulation", "--out", str(out),
            ]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_preexisting_suite_scores_full_marks(self, tmp_path):
        out = tmp_path / "pre"
        assert run([
            "generate", "--outdir", str(out), "--seed", "21", "--suite", "3",
            "--preexisting",
        ]) == 0
        ev = tmp_path / "eval.json"
        assert run([
            "evaluate", *io_flags(out),
            "--ground-truth", str(out / "ground_truth.json"),
            "--methods", "simulation,coefficient,shapley-exact,shapley-mc",
            "--out", str(ev),
        ]) == 0
        summary = json.loads(ev.read_text())
        for method, stats in summary["methods"].items():
            assert stats["correct"] == stats["total"] == 3, method

    def test_adversarial_suite_separates_methods(self, tmp_path):
        out = tmp_path / "adv"
        assert run([
            "generate", "--outdir", str(out), "--seed", "5", "--suite", "6",
            "--adversarial",
        ]) == 0
        ev = tmp_path / "eval.json"
        assert run([
            "evaluate", *io_flags(out),
            "--ground-truth", str(out / "ground_truth.json"),
            "--methods", "simulation,coefficient", "--out", str(ev),
        ]) == 0
        summary = json.loads(ev.read_text())
        sim = summary["methods"]["simulation"]
        coef = summary["methods"]["coefficient"]
        assert sim["correct"] == sim["total"] == 6
        assert coef["correct"] < sim["correct"]

    def test_fixed_replay_mode_recovers_creator(self, suite_dir, tmp_path):
        ev = tmp_path / "eval.json"
        assert run([
            "evaluate", *io_flags(suite_dir),
            "--ground-truth", str(suite_dir / "ground_truth.json"),
            "--methods", "simulation", "--mode", "fixed", "--out", str(ev),
        ]) == 0
        summary = json.loads(ev.read_text())
        stats = summary["methods"]["simulation"]
        assert stats["correct"] == stats["total"] == 4

    def test_unknown_truth_hash_is_data_error(self, suite_dir, tmp_path):
        bad = tmp_path / "truth.json"
        bad.write_text(json.dumps({
            "scenarios": [{
                "seed": "0", "arb_tx_hash": "missing",
                "expected_source": {"kind": "preexisting"}, "creators": [],
            }]
        }))
        assert run([
            "evaluate", *io_flags(suite_dir),
            "--ground-truth", str(bad), "--methods", "simulation",
            "--out", str(tmp_path / "e.json"),
        ]) == 2


class TestAggregateCommand:
    def test_report_and_csv(self, suite_dir, tmp_path, capsys):
        res = tmp_path / "res.jsonl"
        assert run([
            "attribute", *io_flags(suite_dir),
            "--methods", "simulation", "--out", str(res),
        ]) == 0
        out = tmp_path / "agg.json"
        assert run([
            "aggregate",
            "--blocks", str(suite_dir / "blocks.jsonl"),
            "--state", str(suite_dir / "state.json"),
            "--results", str(res), "--out", str(out),
        ]) == 0
        report = json.loads(out.read_text())
        sim = report["methods"]["simulation"]
        # 2 events per creator (competitor + final arb), 4 creators
        assert sim["arb_to_opportunity_ratio"] == "2/1"
        assert sim["attributed_events"] == 8
        assert sim["distinct_sources"] == 4
        # conservation: by_sender totals sum to total_value
        from fractions import Fraction

        total = Fraction(*map(int, sim["total_value"].split("/")))
        by_sender = sum(
            Fraction(*map(int, v["total"].split("/"))) for v in sim["by_sender"].values()
        )
        assert total == by_sender
        csv = capsys.readouterr().out.splitlines()
        assert csv[0] == "method,group_type,group,total_num,total_den,events"
        assert any(line.startswith("simulation,sender,") for line in csv[1:])

    def test_single_sender_concentration(self, tmp_path, capsys):
        out = tmp_path / "one"
        assert run(["generate", "--outdir", str(out), "--seed", "3", "--suite", "1"]) == 0
        res = tmp_path / "r.jsonl"
        assert run([
            "attribute", *io_flags(out), "--methods", "simulation", "--out", str(res),
        ]) == 0
        agg = tmp_path / "agg.json"
        assert run([
            "aggregate", "--blocks", str(out / "blocks.jsonl"),
            "--state", str(out / "state.json"), "--results", str(res), "--out", str(agg),
        ]) == 0
        report = json.loads(agg.read_text())
        sim = report["methods"]["simulation"]
        assert sim["value_shares"]["top_1pct"] == "1/1"  # one creator holds everything
        assert sim["arb_to_opportunity_ratio"] == "1/1"  # one arb per creator
