"""Per-address timelines and post-sandwich behavior measurements.

Counts are the source of truth throughout: curves keep cumulative counts
and rates are derived from them as exact fractions.
"""

from __future__ import annotations

import bisect
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .detect import SandwichEvent
from .errors import EmptyCohort
from .records import TxRecord, Visibility
from .stats import cliffs_delta, mann_whitney_u, summarize

DAY = 86_400
DEFAULT_WINDOW_DAYS = 60

Position = tuple[int, int, int]  # (timestamp, block_number, tx_index)


@dataclass(frozen=True)
class Activity:
    timestamp: int
    block_number: int
    tx_index: int
    tx_hash: str
    visibility: Visibility

    @property
    def position(self) -> Position:
        return (self.timestamp, self.block_number, self.tx_index)


@dataclass(frozen=True)
class Exposure:
    timestamp: int
    block_number: int
    tx_index: int
    tx_hash: str
    event_key: tuple[int, int]
    n: int

    @property
    def position(self) -> Position:
        return (self.timestamp, self.block_number, self.tx_index)


@dataclass(frozen=True)
class AddressTimeline:
    address: str
    activity: tuple[Activity, ...]
    exposures: tuple[Exposure, ...]
    private_exposures: tuple[Exposure, ...] = ()
    first_private: Position | None = None
    _positions: tuple[Position, ...] = field(default=(), repr=False, compare=False)

    @property
    def first_private_ts(self) -> int | None:
        return None if self.first_private is None else self.first_private[0]

    def next_activity_after(self, pos: Position) -> Activity | None:
        k = bisect.bisect_right(self._positions, pos)
        return self.activity[k] if k < len(self.activity) else None


def build_timelines(txs: Iterable[TxRecord], events: Iterable[SandwichEvent]) -> dict[str, AddressTimeline]:
    """One timeline per sender; public victim transactions are numbered chronologically."""
    activity: dict[str, list[Activity]] = defaultdict(list)
    for tx in txs:
        if tx.visibility is None:
            raise ValueError(f"unlabeled record {tx.tx_hash}")
        activity[tx.sender].append(Activity(tx.timestamp, tx.block_number, tx.tx_index, tx.tx_hash, tx.visibility))

    public_hits: dict[str, dict[str, tuple]] = defaultdict(dict)
    private_hits: dict[str, dict[str, tuple]] = defaultdict(dict)
    for ev in events:
        for v in ev.victims:
            bucket = public_hits if v.visibility is Visibility.PUBLIC else private_hits
            bucket[v.sender].setdefault(v.tx_hash, (ev.timestamp, ev.block_number, v.tx_index, v.tx_hash, ev.key))

    def numbered(hits: Mapping[str, tuple]) -> tuple[Exposure, ...]:
        ordered = sorted(hits.values())
        return tuple(Exposure(ts, b, i, h, key, n) for n, (ts, b, i, h, key) in enumerate(ordered, start=1))

    timelines = {}
    for addr in sorted(activity):
        acts = sorted(activity[addr], key=lambda a: a.position)
        first_private = next((a.position for a in acts if a.visibility is Visibility.PRIVATE), None)
        timelines[addr] = AddressTimeline(
            address=addr,
            activity=tuple(acts),
            exposures=numbered(public_hits.get(addr, {})),
            private_exposures=numbered(private_hits.get(addr, {})),
            first_private=first_private,
            _positions=tuple(a.position for a in acts),
        )
    return timelines


def dataset_end(txs: Iterable[TxRecord]) -> int:
    return max(tx.timestamp for tx in txs)


@dataclass(frozen=True)
class CohortMember:
    address: str
    anchor_ts: int
    anchor: Position


@dataclass(frozen=True)
class Cohort:
    n: int
    members: tuple[CohortMember, ...]
    observation_window_days: int = DEFAULT_WINDOW_DAYS

    def __len__(self) -> int:
        return len(self.members)


def nth_sandwich_cohort(timelines: Mapping[str, AddressTimeline], n: int, dataset_end_ts: int,
                        window_days: int = DEFAULT_WINDOW_DAYS) -> Cohort:
    """Addresses with at least n public sandwiches whose whole window after the n-th is observed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    members = []
    for addr in sorted(timelines):
        exposures = timelines[addr].exposures
        if len(exposures) < n:
            continue
        anchor = exposures[n - 1]
        if anchor.timestamp + window_days * DAY <= dataset_end_ts:
            members.append(CohortMember(addr, anchor.timestamp, anchor.position))
    return Cohort(n, tuple(members), window_days)


@dataclass(frozen=True)
class IncidenceCurve:
    kind: str
    n: int
    size: int
    cumulative: tuple[int, ...]
    variant: str | None = None

    @property
    def window(self) -> int:
        return len(self.cumulative) - 1

    def fractions(self) -> list[Fraction]:
        return [Fraction(c, self.size) for c in self.cumulative] if self.size else [Fraction(0)] * len(self.cumulative)

    @property
    def final(self) -> Fraction:
        return self.fractions()[-1]


def _curve(kind: str, n: int, size: int, days: Iterable[int], window_days: int,
           variant: str | None = None) -> IncidenceCurve:
    per_day = Counter(days)
    running = 0
    cumulative = []
    for t in range(window_days + 1):
        running += per_day.get(t, 0)
        cumulative.append(running)
    return IncidenceCurve(kind, n, size, tuple(cumulative), variant)


def reactivation_day(member: CohortMember, timeline: AddressTimeline, window_days: int) -> int | None:
    """Whole days from anchor to the first later transaction, or None if outside the window."""
    nxt = timeline.next_activity_after(member.anchor)
    if nxt is None or nxt.timestamp > member.anchor_ts + window_days * DAY:
        return None
    return (nxt.timestamp - member.anchor_ts) // DAY


def reactivation_curve(cohort: Cohort, timelines: Mapping[str, AddressTimeline]) -> IncidenceCurve:
    if not cohort.members:
        raise EmptyCohort(f"cohort n={cohort.n} is empty")
    w = cohort.observation_window_days
    days = (reactivation_day(m, timelines[m.address], w) for m in cohort.members)
    return _curve("reactivation", cohort.n, len(cohort), (d for d in days if d is not None), w)


@dataclass(frozen=True)
class ChurnRow:
    n: int
    cohort_size: int
    reactivated_count: int

    @property
    def churn_rate(self) -> Fraction | None:
        if not self.cohort_size:
            return None
        return 1 - Fraction(self.reactivated_count, self.cohort_size)


@dataclass(frozen=True)
class ChurnTable:
    rows: tuple[ChurnRow, ...]


def churn_by_n(timelines: Mapping[str, AddressTimeline], n_max: int, window: int,
               dataset_end_ts: int) -> ChurnTable:
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    rows = []
    for n in range(1, n_max + 1):
        cohort = nth_sandwich_cohort(timelines, n, dataset_end_ts, window)
        reactivated = sum(1 for m in cohort.members
                          if reactivation_day(m, timelines[m.address], window) is not None)
        rows.append(ChurnRow(n, len(cohort), reactivated))
    return ChurnTable(tuple(rows))


ADOPTION_VARIANTS = ("all", "reactivated_only")


@dataclass(frozen=True)
class AdoptionRow:
    n: int
    population: int
    switched_count: int
    cohort_size: int = 0
    prior_private_excluded: int = 0

    @property
    def rate(self) -> Fraction | None:
        return Fraction(self.switched_count, self.population) if self.population else None


@dataclass(frozen=True)
class AdoptionTable:
    variant: str
    rows: tuple[AdoptionRow, ...]


def adoption_rate(cohort: Cohort, timelines: Mapping[str, AddressTimeline],
                  variant: str = "all") -> tuple[AdoptionRow, IncidenceCurve]:
    """First-time private routing within the window after the anchor.

    Members already seen transacting privately before their anchor are
    dropped from the population. ``reactivated_only`` further restricts the
    population to members who reactivate inside the window.
    """
    if variant not in ADOPTION_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    w = cohort.observation_window_days
    population = 0
    excluded = 0
    days = []
    for m in cohort.members:
        tl = timelines[m.address]
        fp = tl.first_private
        if fp is not None and fp < m.anchor:
            excluded += 1
            continue
        if variant == "reactivated_only" and reactivation_day(m, tl, w) is None:
            continue
        population += 1
        if fp is not None and fp[0] <= m.anchor_ts + w * DAY:
            days.append((fp[0] - m.anchor_ts) // DAY)
    row = AdoptionRow(cohort.n, population, len(days), len(cohort), excluded)
    return row, _curve("private_adoption", cohort.n, population, days, w, variant)


def adoption_progression(timelines: Mapping[str, AddressTimeline], dataset_end_ts: int,
                         n_range: Iterable[int] = range(1, 8), variant: str = "all",
                         window_days: int = DEFAULT_WINDOW_DAYS
                         ) -> tuple[AdoptionTable, list[IncidenceCurve]]:
    rows = []
    curves = []
    for n in sorted(n_range):
        cohort = nth_sandwich_cohort(timelines, n, dataset_end_ts, window_days)
        row, curve = adoption_rate(cohort, timelines, variant)
        rows.append(row)
        curves.append(curve)
    return AdoptionTable(variant, tuple(rows)), curves


def reactivation_curves(timelines: Mapping[str, AddressTimeline], dataset_end_ts: int,
                        n_range: Iterable[int], window_days: int = DEFAULT_WINDOW_DAYS
                        ) -> list[IncidenceCurve]:
    """Reactivation curves for every non-empty cohort in ``n_range``."""
    curves = []
    for n in n_range:
        cohort = nth_sandwich_cohort(timelines, n, dataset_end_ts, window_days)
        if cohort.members:
            curves.append(reactivation_curve(cohort, timelines))
    return curves


@dataclass(frozen=True)
class ExposureHistogram:
    address_counts: dict[int, int]
    tx_counts: dict[int, int]


def sandwich_count_distribution(timelines: Mapping[str, AddressTimeline]) -> ExposureHistogram:
    """Addresses (and their total transactions) bucketed by how often they were sandwiched.

    Public and private victimizations both count here.
    """
    addresses: Counter[int] = Counter()
    txs: Counter[int] = Counter()
    for tl in timelines.values():
        k = len(tl.exposures) + len(tl.private_exposures)
        if k:
            addresses[k] += 1
            txs[k] += len(tl.activity)
    return ExposureHistogram(dict(sorted(addresses.items())), dict(sorted(txs.items())))


@dataclass(frozen=True)
class ConcentrationTable:
    kind: str
    rows: tuple[tuple[str, int], ...]


def _ranked(counter: Mapping[str, int], k: int | None) -> tuple[tuple[str, int], ...]:
    rows = sorted(((a, c) for a, c in counter.items() if c > 0), key=lambda r: (-r[1], r[0]))
    return tuple(rows if k is None else rows[:k])


def concentration_tables(events: Iterable[SandwichEvent], k: int | None = 10, private_only: bool = True
                         ) -> tuple[ConcentrationTable, ConcentrationTable, ConcentrationTable]:
    """Top attackers, victims and destination contracts.

    With ``private_only`` (the default) attackers are ranked by private
    frontruns, victims by the number of private attacks they suffered and
    destinations by private victim transactions.
    """
    attackers: Counter[str] = Counter()
    victims: Counter[str] = Counter()
    destinations: Counter[str] = Counter()
    seen_dest: set[str] = set()
    for ev in events:
        if private_only and not ev.any_private_victim:
            continue
        attackers[ev.attacker] += 1
        hit = ev.private_victims if private_only else ev.victims
        for sender in {v.sender for v in hit}:
            victims[sender] += 1
        for v in hit:
            if v.destination is not None and v.tx_hash not in seen_dest:
                seen_dest.add(v.tx_hash)
                destinations[v.destination] += 1
    return (
        ConcentrationTable("attacker", _ranked(attackers, k)),
        ConcentrationTable("victim", _ranked(victims, k)),
        ConcentrationTable("destination", _ranked(destinations, k)),
    )


def private_economics(events: Sequence[SandwichEvent]) -> dict:
    """Loss and profit summaries over private-path sandwiches.

    Losses are taken per distinct private victim transaction, profits per
    private attack. Missing provider values are skipped and reported.
    """
    losses: dict[str, Decimal | None] = {}
    profits = []
    profit_missing = 0
    for ev in events:
        if not ev.any_private_victim:
            continue
        for v in ev.private_victims:
            losses.setdefault(v.tx_hash, v.user_loss_usd)
        if ev.profit_missing:
            profit_missing += 1
        profits.append(ev.attacker_profit_usd)
    loss_values = [x for x in losses.values() if x is not None]
    out = {
        "private_attacks": len(profits),
        "private_victim_txs": len(losses),
        "loss_values_missing": len(losses) - len(loss_values),
        "profit_values_incomplete": profit_missing,
        "total_victim_loss_usd": sum(loss_values, Decimal(0)),
        "total_attacker_profit_usd": sum(profits, Decimal(0)),
        "loss_summary": summarize(loss_values) if loss_values else None,
        "profit_summary": summarize(profits) if profits else None,
    }
    return out


def switcher_loss_comparison(cohort: Cohort, timelines: Mapping[str, AddressTimeline],
                             events: Iterable[SandwichEvent]) -> dict | None:
    """Compare anchor-sandwich losses of switchers against non-switchers.

    Samples are ordered (switchers, non-switchers), so a positive delta
    means switchers lost more.
    """
    loss_by_hash = {v.tx_hash: v.user_loss_usd for ev in events for v in ev.victims}
    w = cohort.observation_window_days
    switchers, stayers = [], []
    for m in cohort.members:
        tl = timelines[m.address]
        fp = tl.first_private
        if fp is not None and fp < m.anchor:
            continue
        anchor_hash = tl.exposures[cohort.n - 1].tx_hash
        loss = loss_by_hash.get(anchor_hash)
        if loss is None:
            continue
        switched = fp is not None and fp[0] <= m.anchor_ts + w * DAY
        (switchers if switched else stayers).append(loss)
    if not switchers or not stayers:
        return None
    return {
        "switchers": len(switchers),
        "non_switchers": len(stayers),
        "mann_whitney": mann_whitney_u(switchers, stayers),
        "cliffs_delta": cliffs_delta(switchers, stayers),
    }
