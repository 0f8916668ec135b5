"""Sandwich detection over block-ordered, MEV-labeled transactions."""

from __future__ import annotations

import bisect
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from itertools import groupby
from pathlib import Path
from typing import Iterable, Sequence

from .records import MevType, TxRecord, Visibility

log = logging.getLogger(__name__)

CENTS = Decimal("0.01")


def usd(value: Decimal | None) -> str | None:
    """Serialize a USD amount with exactly two decimals."""
    return None if value is None else str(value.quantize(CENTS))


@dataclass(frozen=True)
class VictimRecord:
    tx_hash: str
    tx_index: int
    sender: str
    visibility: Visibility
    user_loss_usd: Decimal | None = None
    destination: str | None = None


@dataclass(frozen=True)
class SandwichEvent:
    block_number: int
    timestamp: int
    attacker: str
    frontrun_index: int
    backrun_index: int
    frontrun_hash: str
    backrun_hash: str
    victims: tuple[VictimRecord, ...]
    any_private_victim: bool
    total_victim_loss_usd: Decimal
    attacker_profit_usd: Decimal
    loss_missing: bool = False
    profit_missing: bool = False

    @property
    def key(self) -> tuple[int, int]:
        return (self.block_number, self.frontrun_index)

    @property
    def private_victims(self) -> tuple[VictimRecord, ...]:
        return tuple(v for v in self.victims if v.visibility is Visibility.PRIVATE)

    def to_dict(self) -> dict:
        return {
            "block_number": self.block_number,
            "timestamp": self.timestamp,
            "attacker": self.attacker,
            "frontrun_index": self.frontrun_index,
            "backrun_index": self.backrun_index,
            "frontrun_hash": self.frontrun_hash,
            "backrun_hash": self.backrun_hash,
            "victims": [
                {
                    "tx_hash": v.tx_hash,
                    "tx_index": v.tx_index,
                    "sender": v.sender,
                    "visibility": v.visibility.value,
                    "user_loss_usd": usd(v.user_loss_usd),
                    "destination": v.destination,
                }
                for v in self.victims
            ],
            "any_private_victim": self.any_private_victim,
            "total_victim_loss_usd": usd(self.total_victim_loss_usd),
            "attacker_profit_usd": usd(self.attacker_profit_usd),
            "loss_missing": self.loss_missing,
            "profit_missing": self.profit_missing,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SandwichEvent":
        def dec(v):
            return None if v is None else Decimal(str(v))

        victims = tuple(
            VictimRecord(v["tx_hash"], int(v["tx_index"]), v["sender"], Visibility(v["visibility"]),
                         dec(v.get("user_loss_usd")), v.get("destination"))
            for v in obj["victims"]
        )
        return cls(
            block_number=int(obj["block_number"]),
            timestamp=int(obj["timestamp"]),
            attacker=obj["attacker"],
            frontrun_index=int(obj["frontrun_index"]),
            backrun_index=int(obj["backrun_index"]),
            frontrun_hash=obj["frontrun_hash"],
            backrun_hash=obj["backrun_hash"],
            victims=victims,
            any_private_victim=bool(obj["any_private_victim"]),
            total_victim_loss_usd=dec(obj["total_victim_loss_usd"]),
            attacker_profit_usd=dec(obj["attacker_profit_usd"]),
            loss_missing=bool(obj.get("loss_missing", False)),
            profit_missing=bool(obj.get("profit_missing", False)),
        )


def write_events(events: Iterable[SandwichEvent], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_dict(), separators=(",", ":")) + "\n")


def read_events(path: str | Path) -> list[SandwichEvent]:
    with open(path, encoding="utf-8") as fh:
        return [SandwichEvent.from_dict(json.loads(line)) for line in fh if line.strip()]


def sort_canonical(txs: Iterable[TxRecord]) -> list[TxRecord]:
    return sorted(txs, key=lambda t: (t.block_number, t.tx_index))


def _make_event(front: TxRecord, back: TxRecord, victims: list[TxRecord]) -> SandwichEvent:
    losses = [v.user_loss_usd for v in victims]
    profits = [front.extractor_profit_usd, back.extractor_profit_usd]
    return SandwichEvent(
        block_number=front.block_number,
        timestamp=front.timestamp,
        attacker=front.sender,
        frontrun_index=front.tx_index,
        backrun_index=back.tx_index,
        frontrun_hash=front.tx_hash,
        backrun_hash=back.tx_hash,
        victims=tuple(
            VictimRecord(v.tx_hash, v.tx_index, v.sender, v.visibility, v.user_loss_usd, v.destination)
            for v in victims
        ),
        any_private_victim=any(v.visibility is Visibility.PRIVATE for v in victims),
        total_victim_loss_usd=sum((x for x in losses if x is not None), Decimal("0")),
        attacker_profit_usd=sum((x for x in profits if x is not None), Decimal("0")),
        loss_missing=any(x is None for x in losses),
        profit_missing=any(x is None for x in profits),
    )


def detect_block(block_txs: Sequence[TxRecord]) -> list[SandwichEvent]:
    """Confirm frontrun/victim/backrun triples inside one block.

    Each frontrun is paired with the first not-yet-paired backrun from the
    same sender later in the block. Victim-labeled transactions strictly
    between the two legs, excluding the attacker's own, make up the victim
    set; a pair with no such victim yields no event.
    """
    if not block_txs:
        return []
    txs = sorted(block_txs, key=lambda t: t.tx_index)
    block = txs[0].block_number
    if any(t.block_number != block for t in txs):
        raise ValueError("detect_block received records from more than one block")

    backruns: dict[str, list[int]] = {}
    for pos, tx in enumerate(txs):
        if tx.mev_type is MevType.BACKRUN:
            backruns.setdefault(tx.sender, []).append(pos)

    consumed: set[int] = set()
    events = []
    for i, front in enumerate(txs):
        if front.mev_type is not MevType.FRONTRUN:
            continue
        attacker = front.sender
        candidates = backruns.get(attacker, [])
        k = bisect.bisect_right(candidates, i)
        while k < len(candidates) and candidates[k] in consumed:
            k += 1
        if k == len(candidates):
            continue
        j = candidates[k]
        consumed.add(j)
        if any(t.mev_type is MevType.FRONTRUN and t.sender == attacker for t in txs[i + 1:j]):
            log.debug("nested frontruns by %s in block %d", attacker, block)

        victims: list[TxRecord] = []
        seen: set[str] = set()
        for t in txs[i + 1:j]:
            if t.mev_type is MevType.SANDWICH_VICTIM and t.sender != attacker and t.tx_hash not in seen:
                seen.add(t.tx_hash)
                victims.append(t)
        if victims:
            events.append(_make_event(front, txs[j], victims))
    return events


@dataclass
class AttackerStats:
    private_frontrun_count: int = 0
    public_frontrun_count: int = 0
    total_profit_usd: Decimal = Decimal("0")


@dataclass
class AttackerRegistry:
    attackers: dict[str, AttackerStats] = field(default_factory=dict)

    def record(self, event: SandwichEvent) -> None:
        stats = self.attackers.setdefault(event.attacker, AttackerStats())
        if event.any_private_victim:
            stats.private_frontrun_count += 1
        else:
            stats.public_frontrun_count += 1
        stats.total_profit_usd += event.attacker_profit_usd

    def merge(self, other: "AttackerRegistry") -> "AttackerRegistry":
        out = AttackerRegistry()
        for reg in (self, other):
            for addr, s in reg.attackers.items():
                acc = out.attackers.setdefault(addr, AttackerStats())
                acc.private_frontrun_count += s.private_frontrun_count
                acc.public_frontrun_count += s.public_frontrun_count
                acc.total_profit_usd += s.total_profit_usd
        return out

    @property
    def private_attackers(self) -> dict[str, AttackerStats]:
        return {a: s for a, s in self.attackers.items() if s.private_frontrun_count > 0}

    def total_private_frontruns(self) -> int:
        return sum(s.private_frontrun_count for s in self.attackers.values())

    def top_private(self, k: int | None = None) -> list[tuple[str, int]]:
        rows = sorted(((a, s.private_frontrun_count) for a, s in self.private_attackers.items()),
                      key=lambda r: (-r[1], r[0]))
        return rows if k is None else rows[:k]


def link_private_attackers(events: Iterable[SandwichEvent]) -> AttackerRegistry:
    reg = AttackerRegistry()
    for ev in events:
        reg.record(ev)
    return reg


@dataclass(frozen=True)
class DetectionCounters:
    public_attacks: int
    private_attacks: int
    public_victims: int
    private_victims: int

    def to_dict(self) -> dict:
        return {
            "public_attacks": self.public_attacks,
            "private_attacks": self.private_attacks,
            "public_victims": self.public_victims,
            "private_victims": self.private_victims,
        }


def count_events(events: Sequence[SandwichEvent]) -> DetectionCounters:
    """Tally attacks by privacy flag and distinct victim transactions by visibility."""
    private_attacks = sum(1 for ev in events if ev.any_private_victim)
    public_v: set[str] = set()
    private_v: set[str] = set()
    for ev in events:
        for v in ev.victims:
            (private_v if v.visibility is Visibility.PRIVATE else public_v).add(v.tx_hash)
    return DetectionCounters(len(events) - private_attacks, private_attacks, len(public_v), len(private_v))


def split_blocks(txs: Iterable[TxRecord]) -> list[list[TxRecord]]:
    return [list(g) for _, g in groupby(sort_canonical(txs), key=lambda t: t.block_number)]


def detect_all(txs: Iterable[TxRecord], n_jobs: int = 1
               ) -> tuple[list[SandwichEvent], AttackerRegistry, DetectionCounters]:
    blocks = split_blocks(txs)
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            per_block = list(pool.map(detect_block, blocks, chunksize=64))
    else:
        per_block = [detect_block(b) for b in blocks]
    events = [ev for evs in per_block for ev in evs]
    events.sort(key=lambda e: e.key)
    return events, link_private_attackers(events), count_events(events)


def load_fork_set(path: str | Path) -> frozenset[int]:
    forks = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            text = line.split("#", 1)[0].strip()
            if text:
                forks.add(int(text))
    return frozenset(forks)


def apply_fork_filter(events: Iterable[SandwichEvent], forks: Iterable[int]
                      ) -> tuple[list[SandwichEvent], int]:
    forks = frozenset(forks)
    kept = []
    removed = 0
    for ev in events:
        if ev.block_number in forks:
            removed += 1
        else:
            kept.append(ev)
    return kept, removed
