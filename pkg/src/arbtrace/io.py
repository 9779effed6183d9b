"""File formats: block stream, pool state, prices, ground truth, and result
records.

Blocks are line-delimited JSON, one block per line; state, prices, and ground
truth are single JSON documents. Every integer is serialized as a decimal
string so values never pass through 64-bit or float truncation.
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable

from .amm import PoolState
from .chain import Block, ChainSegment, SwapIntent, Transaction, WorldState
from .detect import PriceTable
from .errors import ParseError
from .scenarios import ExpectedKind, ExpectedSource, GroundTruth


def _as_int(value: Any, what: str, path: str, line: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise ParseError(f"{what}: expected integer string, got {value!r}", path=path, line=line)
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"{what}: bad integer {value!r}", path=path, line=line) from None


def dump_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# --- pool state --------------------------------------------------------------


def write_state_file(path: str | Path, state: WorldState) -> None:
    pools = [
        {
            "pool_id": p.pool_id,
            "token0": p.token0,
            "token1": p.token1,
            "reserve0": str(p.reserve0),
            "reserve1": str(p.reserve1),
            "fee_ppm": str(p.fee_ppm),
        }
        for _, p in sorted(state.pools.items())
    ]
    Path(path).write_text(dump_json({"pools": pools}) + "\n")


def read_state_file(path: str | Path) -> WorldState:
    spath = str(path)
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read state file: {exc}", path=spath) from None
    pools = {}
    for rec in doc.get("pools", []):
        try:
            pool = PoolState(
                pool_id=rec["pool_id"],
                token0=rec["token0"],
                token1=rec["token1"],
                reserve0=_as_int(rec["reserve0"], "reserve0", spath),
                reserve1=_as_int(rec["reserve1"], "reserve1", spath),
                fee_ppm=_as_int(rec.get("fee_ppm", "0"), "fee_ppm", spath),
            )
        except (KeyError, ValueError) as exc:
            raise ParseError(f"bad pool record: {exc}", path=spath) from None
        pools[pool.pool_id] = pool
    return WorldState(pools=pools)


# --- blocks ------------------------------------------------------------------


def _tx_record(tx: Transaction) -> dict:
    return {
        "tx_hash": tx.tx_hash,
        "sender": tx.sender,
        "protocol_tag": tx.protocol_tag,
        "fee_tau": str(tx.fee_tau),
        "bid_beta": str(tx.bid_beta),
        "swaps": [
            {"pool_id": s.pool_id, "token_in": s.token_in, "amount_in": str(s.amount_in)}
            for s in tx.swaps
        ],
    }


def write_blocks_file(path: str | Path, blocks: Iterable[Block]) -> None:
    with open(path, "w") as fh:
        for block in blocks:
            fh.write(
                dump_json({"number": str(block.number), "txs": [_tx_record(t) for t in block.txs]})
                + "\n"
            )


def read_blocks_file(path: str | Path) -> tuple[Block, ...]:
    spath = str(path)
    blocks = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read blocks file: {exc}", path=spath) from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad block record: {exc}", path=spath, line=lineno) from None
        try:
            txs = tuple(
                Transaction(
                    tx_hash=rec["tx_hash"],
                    sender=rec["sender"],
                    protocol_tag=rec.get("protocol_tag"),
                    fee_tau=_as_int(rec.get("fee_tau", "0"), "fee_tau", spath, lineno),
                    bid_beta=_as_int(rec.get("bid_beta", "0"), "bid_beta", spath, lineno),
                    swaps=tuple(
                        SwapIntent(
                            pool_id=s["pool_id"],
                            token_in=s["token_in"],
                            amount_in=_as_int(s["amount_in"], "amount_in", spath, lineno),
                        )
                        for s in rec.get("swaps", [])
                    ),
                )
                for rec in doc.get("txs", [])
            )
            blocks.append(Block(number=_as_int(doc["number"], "number", spath, lineno), txs=txs))
        except (KeyError, ValueError) as exc:
            raise ParseError(f"bad block record: {exc}", path=spath, line=lineno) from None
    return tuple(blocks)


def read_segment(blocks_path: str | Path, state_path: str | Path) -> ChainSegment:
    state = read_state_file(state_path)
    blocks = read_blocks_file(blocks_path)
    return ChainSegment(initial_state=state, blocks=blocks)


# --- prices ------------------------------------------------------------------


def write_prices_file(path: str | Path, prices: PriceTable) -> None:
    rows = [
        {"token": token, "price_num": str(p.numerator), "price_den": str(p.denominator)}
        for token, p in sorted(prices.prices.items())
    ]
    Path(path).write_text(dump_json({"base_token": prices.base_token, "prices": rows}) + "\n")


def read_prices_file(path: str | Path) -> PriceTable:
    spath = str(path)
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read prices file: {exc}", path=spath) from None
    try:
        prices = {
            rec["token"]: Fraction(
                _as_int(rec["price_num"], "price_num", spath),
                _as_int(rec["price_den"], "price_den", spath),
            )
            for rec in doc["prices"]
        }
        return PriceTable(base_token=doc["base_token"], prices=prices)
    except (KeyError, ValueError, ZeroDivisionError) as exc:
        raise ParseError(f"bad prices file: {exc}", path=spath) from None


# --- ground truth ------------------------------------------------------------


def _expected_record(exp: ExpectedSource) -> dict:
    rec: dict = {"kind": exp.kind.value}
    if exp.tx_hashes:
        rec["tx_hashes"] = list(exp.tx_hashes)
    return rec


def write_ground_truth_file(path: str | Path, truths: Iterable[GroundTruth]) -> None:
    scenarios = [
        {
            "seed": str(t.seed),
            "arb_tx_hash": t.arb_tx_hash,
            "expected_source": _expected_record(t.expected_source),
            "creators": list(t.creator_hashes),
        }
        for t in truths
    ]
    Path(path).write_text(dump_json({"scenarios": scenarios}) + "\n")


def read_ground_truth_file(path: str | Path) -> list[dict]:
    """Ground truth as plain dicts: seed, arb_tx_hash, expected kind/hashes,
    creators. The route is not persisted; evaluation does not need it."""
    spath = str(path)
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read ground truth: {exc}", path=spath) from None
    out = []
    for rec in doc.get("scenarios", []):
        try:
            exp = rec["expected_source"]
            kind = ExpectedKind(exp["kind"])
            out.append(
                {
                    "seed": _as_int(rec.get("seed", "0"), "seed", spath),
                    "arb_tx_hash": rec["arb_tx_hash"],
                    "expected_kind": kind,
                    "expected_hashes": tuple(exp.get("tx_hashes", ())),
                    "creators": tuple(rec.get("creators", ())),
                }
            )
        except (KeyError, ValueError) as exc:
            raise ParseError(f"bad ground truth record: {exc}", path=spath) from None
    return out


# --- result records ----------------------------------------------------------


def fraction_parts(value: Fraction) -> tuple[str, str]:
    return str(value.numerator), str(value.denominator)


def jsonable(value: Any) -> Any:
    """Down-convert diagnostics payloads: fractions become "num/den" strings."""
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = [jsonable(v) for v in value]
        return sorted(items, key=str) if isinstance(value, (set, frozenset)) else items
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


def read_records(path: str | Path) -> list[dict]:
    spath = str(path)
    out = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read records: {exc}", path=spath) from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad record: {exc}", path=spath, line=lineno) from None
    return out
