"""Transaction records, trace ingestion and visibility labeling."""

from __future__ import annotations

import bisect
import csv
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, replace
from decimal import Decimal, InvalidOperation
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

from .errors import (
    DuplicateKey,
    InconsistentBlock,
    InvalidRange,
    MalformedRow,
    OverlappingRanges,
    UnknownFormat,
)

log = logging.getLogger(__name__)

_HEX_ADDRESS = re.compile(r"^0x[0-9a-f]{40}$")
_HEX_HASH = re.compile(r"^0x[0-9a-f]{64}$")


class Visibility(str, Enum):
    PUBLIC = "public"
    PRIVATE = "private"


class MevType(str, Enum):
    SWAP = "swap"
    NONE = "none"
    ARBITRAGE = "arbitrage"
    LIQUIDATION = "liquidation"
    FRONTRUN = "frontrun"
    BACKRUN = "backrun"
    # provider tag "sandwich" marks the victim, never an attacker leg
    SANDWICH_VICTIM = "sandwich"

    @classmethod
    def parse(cls, raw: str | None) -> "MevType":
        if raw is None or raw == "":
            return cls.NONE
        key = raw.strip().lower()
        try:
            return cls(key)
        except ValueError:
            log.warning("unknown mev_type %r mapped to none", raw)
            return cls.NONE


@dataclass(frozen=True, slots=True)
class TxRecord:
    block_number: int
    tx_index: int
    timestamp: int
    tx_hash: str
    sender: str
    destination: str | None = None
    visibility: Visibility | None = None
    mev_type: MevType = MevType.NONE
    protocol: str | None = None
    user_loss_usd: Decimal | None = None
    extractor_profit_usd: Decimal | None = None
    swap_volume_usd: Decimal | None = None
    swap_count: int | None = None

    @property
    def key(self) -> tuple[int, int]:
        return (self.block_number, self.tx_index)

    def to_dict(self) -> dict:
        return {
            "block_number": self.block_number,
            "tx_index": self.tx_index,
            "timestamp": self.timestamp,
            "tx_hash": self.tx_hash,
            "from": self.sender,
            "to": self.destination,
            "visibility": self.visibility.value if self.visibility else None,
            "mev_type": self.mev_type.value,
            "protocol": self.protocol,
            "user_loss_usd": _dec_str(self.user_loss_usd),
            "extractor_profit_usd": _dec_str(self.extractor_profit_usd),
            "swap_volume_usd": _dec_str(self.swap_volume_usd),
            "swap_count": self.swap_count,
        }


@dataclass(frozen=True)
class BlockRange:
    start_block: int
    end_block: int
    label: str | None = None

    def __post_init__(self) -> None:
        if self.start_block > self.end_block:
            raise InvalidRange(f"start_block {self.start_block} > end_block {self.end_block}")

    def __contains__(self, block_number: int) -> bool:
        return self.start_block <= block_number <= self.end_block


@dataclass(frozen=True)
class MonthRow:
    label: str
    start_block: int
    end_block: int
    total_tx_count: int
    block_count: int
    public_count: int
    private_count: int

    @property
    def public_share(self) -> Fraction:
        return Fraction(self.public_count, self.total_tx_count) if self.total_tx_count else Fraction(0)

    @property
    def private_share(self) -> Fraction:
        return Fraction(self.private_count, self.total_tx_count) if self.total_tx_count else Fraction(0)


@dataclass(frozen=True)
class MonthlyOverview:
    months: tuple[MonthRow, ...]

    def share_series(self) -> list[tuple[str, Fraction, Fraction]]:
        """Plot data for the monthly public/private share chart."""
        return [(m.label, m.public_share, m.private_share) for m in self.months]


CSV_COLUMNS = (
    "block_number", "tx_index", "timestamp", "tx_hash", "from", "to",
    "visibility", "mev_type", "protocol", "user_loss_usd",
    "extractor_profit_usd", "swap_volume_usd", "swap_count",
)
REQUIRED_COLUMNS = CSV_COLUMNS[:6]


def _dec_str(value: Decimal | None) -> str | None:
    return None if value is None else str(value)


def canonical_address(raw: str) -> str:
    addr = raw.strip().lower()
    if not addr.startswith("0x"):
        addr = "0x" + addr
    if not _HEX_ADDRESS.match(addr):
        raise ValueError(f"bad address {raw!r}")
    return addr


def canonical_hash(raw: str) -> str:
    h = raw.strip().lower()
    if not h.startswith("0x"):
        h = "0x" + h
    if not _HEX_HASH.match(h):
        raise ValueError(f"bad tx hash {raw!r}")
    return h


def _opt(row: Mapping, name: str):
    value = row.get(name)
    if value is None:
        return None
    if isinstance(value, str) and value.strip() == "":
        return None
    return value


def _parse_decimal(value, name: str, non_negative: bool) -> Decimal | None:
    if value is None:
        return None
    try:
        d = Decimal(str(value))
    except InvalidOperation:
        raise ValueError(f"{name} is not a decimal: {value!r}") from None
    if not d.is_finite():
        raise ValueError(f"{name} is not finite")
    if non_negative and d < 0:
        raise ValueError(f"{name} must be non-negative")
    return d


def _parse_int(value, name: str) -> int:
    if isinstance(value, bool):
        raise ValueError(f"{name} is not an integer")
    if isinstance(value, int):
        out = value
    else:
        text = str(value).strip()
        if not re.fullmatch(r"\d+", text):
            raise ValueError(f"{name} is not a non-negative integer: {value!r}")
        out = int(text)
    if out < 0:
        raise ValueError(f"{name} must be non-negative")
    return out


def record_from_mapping(row: Mapping) -> TxRecord:
    """Build a record from a CSV row or JSON object; raises ValueError on bad fields."""
    for name in REQUIRED_COLUMNS[:5]:
        if _opt(row, name) is None:
            raise ValueError(f"missing {name}")
    visibility = _opt(row, "visibility")
    if visibility is not None:
        try:
            visibility = Visibility(str(visibility).strip().lower())
        except ValueError:
            raise ValueError(f"bad visibility {visibility!r}") from None
    destination = _opt(row, "to")
    swap_count = _opt(row, "swap_count")
    protocol = _opt(row, "protocol")
    return TxRecord(
        block_number=_parse_int(row["block_number"], "block_number"),
        tx_index=_parse_int(row["tx_index"], "tx_index"),
        timestamp=_parse_int(row["timestamp"], "timestamp"),
        tx_hash=canonical_hash(str(row["tx_hash"])),
        sender=canonical_address(str(row["from"])),
        destination=canonical_address(str(destination)) if destination is not None else None,
        visibility=visibility,
        mev_type=MevType.parse(_opt(row, "mev_type")),
        protocol=str(protocol) if protocol is not None else None,
        user_loss_usd=_parse_decimal(_opt(row, "user_loss_usd"), "user_loss_usd", True),
        extractor_profit_usd=_parse_decimal(_opt(row, "extractor_profit_usd"), "extractor_profit_usd", False),
        swap_volume_usd=_parse_decimal(_opt(row, "swap_volume_usd"), "swap_volume_usd", True),
        swap_count=_parse_int(swap_count, "swap_count") if swap_count is not None else None,
    )


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".jsonl", ".ndjson"):
        return "jsonl"
    raise UnknownFormat(f"cannot infer format from {path.name}")


def _iter_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise MalformedRow(1, "missing header")
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise MalformedRow(1, f"missing columns {missing}")
        unknown = [c for c in header if c not in CSV_COLUMNS]
        if unknown:
            raise MalformedRow(1, f"unknown columns {unknown}")
        for lineno, row in enumerate(reader, start=2):
            if None in row:
                raise MalformedRow(lineno, "too many fields")
            yield lineno, row


def _iter_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line, parse_float=Decimal)
            except json.JSONDecodeError as exc:
                raise MalformedRow(lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise MalformedRow(lineno, "not a JSON object")
            yield lineno, obj


def load_transactions(path: str | Path, format: str | None = None) -> list[TxRecord]:
    """Read a trace file and return records sorted by (block_number, tx_index).

    Duplicate (block, index) positions or duplicate hashes raise DuplicateKey.
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt == "csv":
        rows = _iter_csv(path)
    elif fmt == "jsonl":
        rows = _iter_jsonl(path)
    else:
        raise UnknownFormat(f"unsupported format {fmt!r}")

    records = []
    for lineno, row in rows:
        try:
            records.append(record_from_mapping(row))
        except ValueError as exc:
            raise MalformedRow(lineno, str(exc)) from None
    check_unique(records)
    return sort_records(records)


def check_unique(records: Iterable[TxRecord]) -> None:
    seen_keys: set[tuple[int, int]] = set()
    seen_hashes: set[str] = set()
    block_ts: dict[int, int] = {}
    for rec in records:
        if block_ts.setdefault(rec.block_number, rec.timestamp) != rec.timestamp:
            raise InconsistentBlock(f"block {rec.block_number} carries more than one timestamp")
        if rec.key in seen_keys:
            raise DuplicateKey(f"duplicate position block={rec.block_number} index={rec.tx_index}")
        if rec.tx_hash in seen_hashes:
            raise DuplicateKey(f"duplicate tx_hash {rec.tx_hash}")
        seen_keys.add(rec.key)
        seen_hashes.add(rec.tx_hash)


def sort_records(records: Iterable[TxRecord]) -> list[TxRecord]:
    return sorted(records, key=lambda r: (r.block_number, r.tx_index))


def write_transactions(records: Iterable[TxRecord], path: str | Path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")
    elif fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for rec in records:
                d = rec.to_dict()
                writer.writerow(["" if d[c] is None else d[c] for c in CSV_COLUMNS])
    else:
        raise UnknownFormat(f"unsupported format {fmt!r}")


def load_mempool_index(path: str | Path) -> dict[str, int]:
    """Read a ``tx_hash,first_seen_ts`` CSV, keeping the earliest sighting per hash."""
    index: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"tx_hash", "first_seen_ts"} <= set(reader.fieldnames):
            raise MalformedRow(1, "mempool index needs columns tx_hash,first_seen_ts")
        for lineno, row in enumerate(reader, start=2):
            try:
                h = canonical_hash(row["tx_hash"] or "")
                ts = _parse_int(row["first_seen_ts"], "first_seen_ts")
            except ValueError as exc:
                raise MalformedRow(lineno, str(exc)) from None
            if h not in index or ts < index[h]:
                index[h] = ts
    return index


def write_mempool_index(index: Mapping[str, int], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tx_hash", "first_seen_ts"])
        for h in sorted(index):
            writer.writerow([h, index[h]])


def is_public(tx_hash: str, block_ts: int, mempool: Mapping[str, int], strict: bool = False) -> bool:
    seen = mempool.get(tx_hash)
    if seen is None:
        return False
    return seen < block_ts if strict else seen <= block_ts


def label_visibility(
    txs: Sequence[TxRecord], mempool: Mapping[str, int], strict: bool = False
) -> list[TxRecord]:
    """Mark each record Public iff its hash was seen in the mempool no later than its block.

    With ``strict=True`` a sighting in the same second as the block counts as Private.
    """
    out = []
    for tx in txs:
        vis = Visibility.PUBLIC if is_public(tx.tx_hash, tx.timestamp, mempool, strict) else Visibility.PRIVATE
        out.append(tx if tx.visibility is vis else replace(tx, visibility=vis))
    return out


def mempool_coverage(txs: Sequence[TxRecord], mempool: Mapping[str, int]) -> Fraction:
    """Share of records whose hash appears in the mempool index at all."""
    if not txs:
        return Fraction(1)
    hits = sum(1 for tx in txs if tx.tx_hash in mempool)
    return Fraction(hits, len(txs))


def filter_block_range(txs: Iterable[TxRecord], block_range: BlockRange) -> list[TxRecord]:
    return [tx for tx in txs if block_range.start_block <= tx.block_number <= block_range.end_block]


def check_disjoint(ranges: Sequence[BlockRange]) -> None:
    ordered = sorted(ranges, key=lambda r: r.start_block)
    for a, b in zip(ordered, ordered[1:]):
        if b.start_block <= a.end_block:
            raise OverlappingRanges(f"{a.label or a} overlaps {b.label or b}")


def monthly_overview(txs: Iterable[TxRecord], month_ranges: Sequence[BlockRange]) -> MonthlyOverview:
    check_disjoint(month_ranges)
    ordered = sorted(month_ranges, key=lambda r: r.start_block)
    totals = Counter()
    public = Counter()
    blocks: dict[int, set[int]] = {i: set() for i in range(len(ordered))}
    starts = [r.start_block for r in ordered]

    for tx in txs:
        pos = bisect.bisect_right(starts, tx.block_number) - 1
        if pos < 0 or tx.block_number > ordered[pos].end_block:
            continue
        totals[pos] += 1
        blocks[pos].add(tx.block_number)
        if tx.visibility is Visibility.PUBLIC:
            public[pos] += 1
        elif tx.visibility is None:
            raise ValueError(f"unlabeled record {tx.tx_hash}")

    rows = []
    for i, r in enumerate(ordered):
        label = r.label or f"{r.start_block}-{r.end_block}"
        rows.append(MonthRow(label, r.start_block, r.end_block, totals[i], len(blocks[i]),
                             public[i], totals[i] - public[i]))
    return MonthlyOverview(tuple(rows))


def load_block_ranges(path: str | Path) -> list[BlockRange]:
    """Read a JSON or YAML mapping of ``label -> [start, end]``."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise InvalidRange(f"{path.name}: expected a mapping of label -> [start, end]")
    return block_ranges_from_mapping(data)


def block_ranges_from_mapping(data: Mapping) -> list[BlockRange]:
    ranges = []
    for label, bounds in data.items():
        if not isinstance(bounds, (list, tuple)) or len(bounds) != 2:
            raise InvalidRange(f"{label}: expected [start, end]")
        ranges.append(BlockRange(int(bounds[0]), int(bounds[1]), str(label)))
    check_disjoint(ranges)
    return sorted(ranges, key=lambda r: r.start_block)
