"""Seeded synthetic chains with planted sandwiches and user trajectories."""

from __future__ import annotations

import csv
import hashlib
import heapq
import itertools
import json
import random
from bisect import bisect_left
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path

from ..enrich import MevLabel, write_label_file
from ..errors import InfeasibleConfig
from ..records import MevType, TxRecord, Visibility, write_mempool_index

DAY = 86_400
BLOCK_TIME_S = 12
BLOCKS_PER_DAY = DAY // BLOCK_TIME_S

# Bump when a distractor is added or its layout changes.
DISTRACTOR_CATALOGUE_VERSION = 1
DISTRACTOR_CATALOGUE = (
    "unmatched_frontrun",  # frontrun with no later backrun from its sender
    "orphan_backrun",      # backrun with no earlier frontrun from its sender
    "self_sandwich",       # attacker's own tx is the only victim-labeled one
    "empty_region",        # frontrun/backrun pair around non-victim traffic
    "stray_victim",        # victim label outside any frontrun/backrun region
)
# Longest planted segment: F, 3 victims, 1 self-victim, 2 fillers, B.
MAX_PLANTED_LEN = 8

PROTOCOLS = ("uniswap2", "uniswap3", "sushiswap", "curve", "balancer")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_blocks: int = 2000
    txs_per_block: tuple[int, int] = (8, 24)
    n_addresses: int = 800
    n_attackers: int = 12
    n_destinations: int = 16
    sandwich_rate: float = 0.3
    self_sandwich_rate: float = 0.05
    multi_victim_rate: float = 0.25
    private_victim_rate: float = 0.2
    distractor_rate: float = 0.1
    churn_probability: float = 0.08
    adoption_probability: float = 0.35
    background_private_rate: float = 0.005
    followup_rate: float = 0.6
    fork_block_count: int = 3
    window_days: int = 60
    span_days: int = 150
    start_block: int = 21_089_069
    start_ts: int = 1_730_419_200

    def validate(self) -> None:
        rates = ("sandwich_rate", "self_sandwich_rate", "multi_victim_rate", "private_victim_rate",
                 "distractor_rate", "churn_probability", "adoption_probability",
                 "background_private_rate", "followup_rate")
        for name in rates:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InfeasibleConfig(f"{name}={v} outside [0, 1]")
        lo, hi = self.txs_per_block
        if lo < 1 or hi < lo:
            raise InfeasibleConfig(f"bad txs_per_block {self.txs_per_block}")
        for name in ("n_blocks", "n_addresses", "n_destinations", "window_days", "span_days"):
            if getattr(self, name) < 1:
                raise InfeasibleConfig(f"{name} must be positive")
        if self.fork_block_count < 0:
            raise InfeasibleConfig("fork_block_count must be non-negative")
        if self.n_blocks > self.span_days * BLOCKS_PER_DAY:
            raise InfeasibleConfig("n_blocks exceeds the blocks available in span_days")
        if self.fork_block_count > self.n_blocks:
            raise InfeasibleConfig("fork_block_count exceeds n_blocks")
        needs_patterns = self.sandwich_rate > 0 or self.self_sandwich_rate > 0 or self.distractor_rate > 0
        if needs_patterns and lo < MAX_PLANTED_LEN:
            raise InfeasibleConfig(
                f"txs_per_block minimum {lo} cannot host a {MAX_PLANTED_LEN}-transaction pattern")
        if needs_patterns and self.n_attackers < 2 + len(DISTRACTOR_CATALOGUE):
            raise InfeasibleConfig("n_attackers too small for distinct attackers per block")
        if self.n_addresses < 4:
            raise InfeasibleConfig("n_addresses must be at least 4")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise InfeasibleConfig(f"unknown synth config keys {sorted(unknown)}")
        data = dict(data)
        if "txs_per_block" in data:
            data["txs_per_block"] = tuple(data["txs_per_block"])
        return cls(**data)


@dataclass(frozen=True)
class PlantedEvent:
    block_number: int
    attacker: str
    frontrun_index: int
    backrun_index: int
    victim_hashes: tuple[str, ...]
    any_private_victim: bool


@dataclass(frozen=True)
class VictimPlan:
    anchor_ts: int
    tx_hash: str
    churn: bool
    adopt_not_before: int | None


@dataclass
class GroundTruth:
    events: list[PlantedEvent] = field(default_factory=list)
    behavior: dict[str, list[VictimPlan]] = field(default_factory=dict)
    fork_blocks: list[int] = field(default_factory=list)
    mempool_index: dict[str, int] = field(default_factory=dict)
    distractor_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "distractor_catalogue_version": DISTRACTOR_CATALOGUE_VERSION,
            "events": [asdict(e) for e in self.events],
            "behavior": {a: [asdict(p) for p in plans] for a, plans in sorted(self.behavior.items())},
            "fork_blocks": sorted(self.fork_blocks),
            "distractor_counts": dict(sorted(self.distractor_counts.items())),
        }


@dataclass
class _User:
    silent_until: int = -1
    adopt_at: int | None = None
    adopted: bool = False


@dataclass
class _Slot:
    """A transaction before its final position in the block is known."""
    sender: str
    mev_type: MevType
    private: bool
    destination: str | None = None
    loss: Decimal | None = None
    profit: Decimal | None = None
    volume: Decimal | None = None
    protocol: str | None = None
    planted: int | None = None  # id of the planted event this slot belongs to
    role: str = ""


def _addr(rng: random.Random) -> str:
    return "0x" + format(rng.getrandbits(160), "040x")


def _cents(rng: random.Random, mu: float, sigma: float) -> Decimal:
    return Decimal(max(1, int(rng.lognormvariate(mu, sigma)))).scaleb(-2)


class _ChainBuilder:
    def __init__(self, cfg: SynthConfig) -> None:
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        rng = self.rng
        self.users = [_addr(rng) for _ in range(cfg.n_addresses)]
        self.attackers = [_addr(rng) for _ in range(cfg.n_attackers)]
        self.destinations = [_addr(rng) for _ in range(cfg.n_destinations)]
        # heavy-tailed activity: a few users transact (and get sandwiched) a lot
        weights = [1.0 / (rank + 1) ** 0.9 for rank in range(cfg.n_addresses)]
        self.cum_weights = list(itertools.accumulate(weights))
        dest_weights = [1.0 / (rank + 1) ** 1.2 for rank in range(cfg.n_destinations)]
        self.dest_cum = list(itertools.accumulate(dest_weights))
        self.state = {u: _User() for u in self.users}
        self.followups: list[tuple[int, int, str]] = []
        self._seq = itertools.count()
        self.truth = GroundTruth(distractor_counts={k: 0 for k in DISTRACTOR_CATALOGUE})

    # -- selection helpers -------------------------------------------------
    def _pick_user(self, ts: int, exclude: set[str] = frozenset()) -> str:
        for _ in range(64):
            r = self.rng.random() * self.cum_weights[-1]
            u = self.users[bisect_left(self.cum_weights, r)]
            if self.state[u].silent_until < ts and u not in exclude:
                return u
        for u in self.users:
            if self.state[u].silent_until < ts and u not in exclude:
                return u
        return self.users[0]

    def _pick_destination(self) -> str:
        r = self.rng.random() * self.dest_cum[-1]
        return self.destinations[bisect_left(self.dest_cum, r)]

    def _user_private(self, user: str, ts: int) -> bool:
        st = self.state[user]
        if not st.adopted and st.adopt_at is not None and ts >= st.adopt_at:
            st.adopted = True
            return True
        if st.adopted:
            return self.rng.random() < 0.8
        return self.rng.random() < self.cfg.background_private_rate

    # -- segment builders --------------------------------------------------
    def _filler(self, user: str, ts: int) -> _Slot:
        rng = self.rng
        private = self._user_private(user, ts)
        roll = rng.random()
        if roll < 0.6:
            return _Slot(user, MevType.NONE, private,
                         destination=None if rng.random() < 0.01 else self._pick_destination())
        if roll < 0.92:
            return _Slot(user, MevType.SWAP, private, destination=self._pick_destination(),
                         volume=_cents(rng, 10.0, 1.5), protocol=rng.choice(PROTOCOLS))
        if roll < 0.97:
            return _Slot(user, MevType.ARBITRAGE, private, destination=self._pick_destination(),
                         profit=_cents(rng, 6.0, 1.0), protocol=rng.choice(PROTOCOLS))
        return _Slot(user, MevType.LIQUIDATION, private, destination=self._pick_destination(),
                     profit=_cents(rng, 7.0, 1.0))

    def _victim(self, user: str, private: bool) -> _Slot:
        rng = self.rng
        loss = None if rng.random() < 0.03 else _cents(rng, 8.0, 1.3)
        return _Slot(user, MevType.SANDWICH_VICTIM, private, destination=self._pick_destination(),
                     loss=loss, volume=_cents(rng, 11.0, 1.2), protocol=rng.choice(PROTOCOLS), role="victim")

    def _leg(self, attacker: str, mev: MevType, planted: int | None, role: str) -> _Slot:
        rng = self.rng
        profit = None if rng.random() < 0.02 else _cents(rng, 7.0, 1.1)
        return _Slot(attacker, mev, rng.random() < 0.9, destination=self.destinations[0],
                     profit=profit, protocol=rng.choice(PROTOCOLS), planted=planted, role=role)

    def _planted(self, attacker: str, ts: int, pid: int, used: set[str]) -> list[_Slot]:
        rng, cfg = self.rng, self.cfg
        n_victims = rng.randint(2, 3) if rng.random() < cfg.multi_victim_rate else 1
        inner: list[_Slot] = []
        for _ in range(n_victims):
            # occasionally the same user is hit twice inside one region
            if inner and rng.random() < 0.15:
                user = inner[-1].sender
            else:
                user = self._pick_user(ts, used)
            used.add(user)
            slot = self._victim(user, rng.random() < cfg.private_victim_rate)
            slot.planted = pid
            inner.append(slot)
        if rng.random() < cfg.self_sandwich_rate:
            self_slot = self._victim(attacker, rng.random() < 0.5)
            self_slot.role = "self_victim"
            inner.append(self_slot)
            self.truth.distractor_counts.setdefault("self_mixed", 0)
            self.truth.distractor_counts["self_mixed"] += 1
        for _ in range(rng.randint(0, 2)):
            inner.append(self._filler(self._pick_user(ts, used), ts))
        rng.shuffle(inner)
        return [self._leg(attacker, MevType.FRONTRUN, pid, "front"), *inner,
                self._leg(attacker, MevType.BACKRUN, pid, "back")]

    def _distractor(self, kind: str, attacker: str, ts: int, used: set[str]) -> list[_Slot]:
        if kind == "unmatched_frontrun":
            return [self._leg(attacker, MevType.FRONTRUN, None, "front"),
                    self._filler(self._pick_user(ts, used), ts)]
        if kind == "orphan_backrun":
            return [self._filler(self._pick_user(ts, used), ts),
                    self._leg(attacker, MevType.BACKRUN, None, "back")]
        if kind == "self_sandwich":
            return [self._leg(attacker, MevType.FRONTRUN, None, "front"),
                    self._victim(attacker, self.rng.random() < 0.5),
                    self._leg(attacker, MevType.BACKRUN, None, "back")]
        if kind == "empty_region":
            return [self._leg(attacker, MevType.FRONTRUN, None, "front"),
                    self._filler(self._pick_user(ts, used), ts),
                    self._leg(attacker, MevType.BACKRUN, None, "back")]
        if kind == "stray_victim":
            user = self._pick_user(ts, used)
            return [self._victim(user, self._user_private(user, ts))]
        raise ValueError(kind)

    # -- behavior ----------------------------------------------------------
    def _after_public_victim(self, user: str, ts: int, tx_hash: str) -> None:
        rng, cfg = self.rng, self.cfg
        st = self.state[user]
        churn = rng.random() < cfg.churn_probability
        adopt = None
        if churn:
            st.silent_until = ts + (cfg.window_days + 1) * DAY + rng.randint(0, 20 * DAY)
        else:
            if rng.random() < cfg.followup_rate:
                delay = rng.randint(12, 6 * 3600) if rng.random() < 0.5 else rng.randint(1, cfg.window_days) * DAY
                heapq.heappush(self.followups, (ts + delay, next(self._seq), user))
            if not st.adopted and st.adopt_at is None and rng.random() < cfg.adoption_probability:
                st.adopt_at = ts + rng.randint(0, cfg.window_days * DAY)
                adopt = st.adopt_at
        self.truth.behavior.setdefault(user, []).append(VictimPlan(ts, tx_hash, churn, adopt))

    # -- main loop ---------------------------------------------------------
    def build(self) -> tuple[list[TxRecord], list[MevLabel], GroundTruth]:
        cfg, rng = self.cfg, self.rng
        span_blocks = cfg.span_days * BLOCKS_PER_DAY
        blocks = sorted(rng.sample(range(cfg.start_block, cfg.start_block + span_blocks), cfg.n_blocks))
        records: list[TxRecord] = []
        pid_counter = itertools.count()
        planted_blocks: list[int] = []

        for block in blocks:
            ts = cfg.start_ts + BLOCK_TIME_S * (block - cfg.start_block)
            size = rng.randint(*cfg.txs_per_block)
            attackers = iter(rng.sample(self.attackers, min(len(self.attackers), 2 + len(DISTRACTOR_CATALOGUE))))
            used: set[str] = set()
            segments: list[list[_Slot]] = []
            room = size

            wants = []
            if rng.random() < cfg.sandwich_rate:
                wants.append("planted")
                if rng.random() < cfg.sandwich_rate / 3:
                    wants.append("planted")
            if rng.random() < cfg.self_sandwich_rate:
                wants.append("self_sandwich")
            for kind in DISTRACTOR_CATALOGUE:
                if kind != "self_sandwich" and rng.random() < cfg.distractor_rate:
                    wants.append(kind)
            for kind in wants:
                if kind == "planted":
                    seg = self._planted(next(attackers), ts, next(pid_counter), used)
                else:
                    seg = self._distractor(kind, next(attackers), ts, used)
                if len(seg) > room:
                    continue
                if kind != "planted":
                    self.truth.distractor_counts[kind] += 1
                room -= len(seg)
                segments.append(seg)

            while room > 0:
                due = None
                if self.followups and self.followups[0][0] <= ts:
                    _, _, due = heapq.heappop(self.followups)
                    if self.state[due].silent_until >= ts:
                        continue
                user = due or self._pick_user(ts)
                segments.append([self._filler(user, ts)])
                room -= 1

            rng.shuffle(segments)
            slots = [s for seg in segments for s in seg]
            block_records, block_events = self._emit_block(block, ts, slots)
            records.extend(block_records)
            if block_events:
                planted_blocks.append(block)
            self.truth.events.extend(block_events)

        self._choose_forks(blocks, planted_blocks)
        labels = [
            MevLabel(r.tx_hash, r.mev_type, r.protocol, r.user_loss_usd, r.extractor_profit_usd,
                     r.swap_volume_usd, r.swap_count, r.block_number)
            for r in records if r.mev_type is not MevType.NONE
        ]
        return records, labels, self.truth

    def _emit_block(self, block: int, ts: int, slots: list[_Slot]) -> tuple[list[TxRecord], list[PlantedEvent]]:
        rng = self.rng
        out = []
        planted: dict[int, dict] = {}
        for idx, s in enumerate(slots):
            tx_hash = "0x" + format(rng.getrandbits(256), "064x")
            vis = Visibility.PRIVATE if s.private else Visibility.PUBLIC
            if vis is Visibility.PUBLIC:
                self.truth.mempool_index[tx_hash] = ts - rng.randint(0, 30)
            elif rng.random() < 0.05:
                # seen only after inclusion: still private
                self.truth.mempool_index[tx_hash] = ts + rng.randint(1, 60)
            rec = TxRecord(
                block_number=block, tx_index=idx, timestamp=ts, tx_hash=tx_hash, sender=s.sender,
                destination=s.destination, visibility=vis, mev_type=s.mev_type, protocol=s.protocol,
                user_loss_usd=s.loss, extractor_profit_usd=s.profit, swap_volume_usd=s.volume,
                swap_count=1 if s.volume is not None else None,
            )
            out.append(rec)
            if s.planted is not None:
                info = planted.setdefault(s.planted, {"victims": []})
                if s.role == "front":
                    info["front"] = rec
                elif s.role == "back":
                    info["back"] = rec
                elif s.role == "victim":
                    info["victims"].append(rec)
            if s.role == "victim" and s.planted is not None and vis is Visibility.PUBLIC:
                self._after_public_victim(s.sender, ts, tx_hash)

        events = []
        for pid in sorted(planted, key=lambda p: planted[p]["front"].tx_index):
            info = planted[pid]
            front, back = info["front"], info["back"]
            victims = sorted(info["victims"], key=lambda r: r.tx_index)
            events.append(PlantedEvent(
                block, front.sender, front.tx_index, back.tx_index,
                tuple(v.tx_hash for v in victims),
                any(v.visibility is Visibility.PRIVATE for v in victims),
            ))
        return out, events

    def _choose_forks(self, blocks: list[int], planted_blocks: list[int]) -> None:
        k = self.cfg.fork_block_count
        from_planted = self.rng.sample(planted_blocks, min(len(planted_blocks), (k + 1) // 2))
        rest = [b for b in blocks if b not in set(from_planted)]
        others = self.rng.sample(rest, k - len(from_planted))
        self.truth.fork_blocks = sorted(from_planted + others)


def generate_chain(cfg: SynthConfig) -> tuple[list[TxRecord], list[MevLabel], GroundTruth]:
    """Deterministic for a given ``cfg.seed``."""
    cfg.validate()
    return _ChainBuilder(cfg).build()


def month_ranges(cfg: SynthConfig) -> dict[str, list[int]]:
    """Calendar-month block windows covering the synthetic span."""
    end_block = cfg.start_block + cfg.span_days * BLOCKS_PER_DAY - 1
    start = datetime.fromtimestamp(cfg.start_ts, tz=timezone.utc)
    year, month = start.year, start.month
    out: dict[str, list[int]] = {}
    lo = cfg.start_block
    while lo <= end_block:
        year, month = (year + 1, 1) if month == 12 else (year, month + 1)
        boundary_ts = int(datetime(year, month, 1, tzinfo=timezone.utc).timestamp())
        nxt = cfg.start_block + -(-(boundary_ts - cfg.start_ts) // BLOCK_TIME_S)
        label_dt = datetime.fromtimestamp(cfg.start_ts + (lo - cfg.start_block) * BLOCK_TIME_S, tz=timezone.utc)
        out[label_dt.strftime("%Y-%m")] = [lo, min(nxt - 1, end_block)]
        lo = nxt
    return out


RAW_TX_COLUMNS = ("block_number", "tx_index", "timestamp", "tx_hash", "from", "to")


def write_dataset(outdir: str | Path, cfg: SynthConfig,
                  records: list[TxRecord], labels: list[MevLabel], truth: GroundTruth) -> dict[str, str]:
    """Write the raw trace, mempool index, label fixture, fork list and ground truth.

    Returns a mapping of file name to sha256 digest.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "transactions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_TX_COLUMNS)
        for r in records:
            w.writerow([r.block_number, r.tx_index, r.timestamp, r.tx_hash, r.sender, r.destination or ""])
    write_mempool_index(truth.mempool_index, out / "mempool.csv")
    write_label_file(labels, out / "labels.jsonl")
    (out / "forks.txt").write_text("".join(f"{b}\n" for b in sorted(truth.fork_blocks)), encoding="utf-8")
    (out / "block_ranges.json").write_text(json.dumps(month_ranges(cfg), indent=2) + "\n", encoding="utf-8")
    cfg_dict = asdict(cfg)
    cfg_dict["txs_per_block"] = list(cfg.txs_per_block)
    (out / "synth_config.json").write_text(json.dumps(cfg_dict, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "ground_truth.json").write_text(
        json.dumps(truth.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    names = ("transactions.csv", "mempool.csv", "labels.jsonl", "forks.txt",
             "block_ranges.json", "synth_config.json", "ground_truth.json")
    return {n: hashlib.sha256((out / n).read_bytes()).hexdigest() for n in names}
