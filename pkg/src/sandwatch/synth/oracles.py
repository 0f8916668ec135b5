"""Brute-force reference implementations used to cross-check the fast paths.

Nothing here calls into ``detect`` or ``analytics`` logic; only their result
containers are shared so outputs compare with ``==``.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Iterable, Sequence

from ..analytics import (
    AdoptionRow,
    AdoptionTable,
    ChurnRow,
    ChurnTable,
    IncidenceCurve,
)
from ..detect import SandwichEvent, VictimRecord
from ..records import MevType, TxRecord, Visibility

DAY = 86_400


def oracle_detect(block_txs: Sequence[TxRecord]) -> list[SandwichEvent]:
    """Exhaustive (i, j) scan of one block under greedy first-match pairing."""
    rows = sorted(block_txs, key=lambda t: t.tx_index)
    taken: list[int] = []
    events = []
    for i in range(len(rows)):
        if rows[i].mev_type != MevType.FRONTRUN:
            continue
        s = rows[i].sender
        pairs = [(i, j) for j in range(len(rows))
                 if j > i and rows[j].sender == s and rows[j].mev_type == MevType.BACKRUN]
        open_pairs = [p for p in pairs if p[1] not in taken]
        if not open_pairs:
            continue
        j = min(open_pairs)[1]
        taken.append(j)

        victims = []
        for t in rows:
            if not (rows[i].tx_index < t.tx_index < rows[j].tx_index):
                continue
            if t.mev_type != MevType.SANDWICH_VICTIM or t.sender == s:
                continue
            if any(v.tx_hash == t.tx_hash for v in victims):
                continue
            victims.append(VictimRecord(t.tx_hash, t.tx_index, t.sender, t.visibility,
                                        t.user_loss_usd, t.destination))
        if not victims:
            continue

        loss = Decimal(0)
        for v in victims:
            if v.user_loss_usd is not None:
                loss += v.user_loss_usd
        profit = Decimal(0)
        for leg in (rows[i], rows[j]):
            if leg.extractor_profit_usd is not None:
                profit += leg.extractor_profit_usd
        events.append(SandwichEvent(
            block_number=rows[i].block_number,
            timestamp=rows[i].timestamp,
            attacker=s,
            frontrun_index=rows[i].tx_index,
            backrun_index=rows[j].tx_index,
            frontrun_hash=rows[i].tx_hash,
            backrun_hash=rows[j].tx_hash,
            victims=tuple(victims),
            any_private_victim=Visibility.PRIVATE in [v.visibility for v in victims],
            total_victim_loss_usd=loss,
            attacker_profit_usd=profit,
            loss_missing=None in [v.user_loss_usd for v in victims],
            profit_missing=rows[i].extractor_profit_usd is None or rows[j].extractor_profit_usd is None,
        ))
    return events


@dataclass
class BehaviorOracleResult:
    churn: ChurnTable
    adoption_all: AdoptionTable
    adoption_reactivated: AdoptionTable
    reactivation_curves: list[IncidenceCurve]
    adoption_curves_all: list[IncidenceCurve]
    adoption_curves_reactivated: list[IncidenceCurve]


def _brute_curve(kind: str, n: int, days: list[int], size: int, window: int,
                 variant: str | None) -> IncidenceCurve:
    cum = tuple(sum(1 for d in days if d <= t) for t in range(window + 1))
    return IncidenceCurve(kind, n, size, cum, variant)


def oracle_behavior(txs: Iterable[TxRecord], events: Iterable[SandwichEvent], window_days: int = 60,
                    n_max: int = 10, dataset_end_ts: int | None = None) -> BehaviorOracleResult:
    """Direct per-address scan producing churn, adoption and curve outputs for n = 1..n_max."""
    txs = list(txs)
    end_ts = dataset_end_ts if dataset_end_ts is not None else max(t.timestamp for t in txs)
    public_victim_hashes = set()
    for ev in events:
        for v in ev.victims:
            if v.visibility == Visibility.PUBLIC:
                public_victim_hashes.add(v.tx_hash)

    history: dict[str, list[tuple[int, int, int, str, Visibility]]] = {}
    for t in txs:
        history.setdefault(t.sender, []).append((t.timestamp, t.block_number, t.tx_index, t.tx_hash, t.visibility))
    for h in history.values():
        h.sort()

    window_s = window_days * DAY
    churn_rows, all_rows, re_rows = [], [], []
    re_curves, ad_all_curves, ad_re_curves = [], [], []
    for n in range(1, n_max + 1):
        size = 0
        react_days = []
        all_pop = re_pop = excluded = 0
        all_days, re_days = [], []
        for addr in sorted(history):
            h = history[addr]
            hits = [k for k, row in enumerate(h) if row[3] in public_victim_hashes]
            if len(hits) < n:
                continue
            a = hits[n - 1]
            anchor_ts = h[a][0]
            if anchor_ts + window_s > end_ts:
                continue
            size += 1

            react = None
            if a + 1 < len(h) and h[a + 1][0] - anchor_ts <= window_s:
                react = (h[a + 1][0] - anchor_ts) // DAY
                react_days.append(react)

            private_rows = [k for k, row in enumerate(h) if row[4] == Visibility.PRIVATE]
            if private_rows and private_rows[0] < a:
                excluded += 1
                continue
            adopt = None
            if private_rows and h[private_rows[0]][0] - anchor_ts <= window_s:
                adopt = (h[private_rows[0]][0] - anchor_ts) // DAY
            all_pop += 1
            if adopt is not None:
                all_days.append(adopt)
            if react is not None:
                re_pop += 1
                if adopt is not None:
                    re_days.append(adopt)

        churn_rows.append(ChurnRow(n, size, len(react_days)))
        all_rows.append(AdoptionRow(n, all_pop, len(all_days), size, excluded))
        re_rows.append(AdoptionRow(n, re_pop, len(re_days), size, excluded))
        if size:
            re_curves.append(_brute_curve("reactivation", n, react_days, size, window_days, None))
        ad_all_curves.append(_brute_curve("private_adoption", n, all_days, all_pop, window_days, "all"))
        ad_re_curves.append(_brute_curve("private_adoption", n, re_days, re_pop, window_days, "reactivated_only"))

    return BehaviorOracleResult(
        ChurnTable(tuple(churn_rows)),
        AdoptionTable("all", tuple(all_rows)),
        AdoptionTable("reactivated_only", tuple(re_rows)),
        re_curves, ad_all_curves, ad_re_curves,
    )
