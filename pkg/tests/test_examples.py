"""Worked examples for each operation, checked against small independent recounts."""

from __future__ import annotations

import collections
import random
from decimal import Decimal
from fractions import Fraction

from conftest import B, F, N, PRIV, PUB, V, addr, block_of, tx
from sandwatch.analytics import (
    DAY,
    adoption_progression,
    build_timelines,
    churn_by_n,
    concentration_tables,
    nth_sandwich_cohort,
    reactivation_curve,
    sandwich_count_distribution,
)
from sandwatch.detect import (
    apply_fork_filter,
    count_events,
    detect_all,
    link_private_attackers,
    sort_canonical,
    split_blocks,
)
from sandwatch.enrich import LabelClient, MevLabel, ProviderConfig, apply_labels, visibility_mev_crosstab, write_label_file
from sandwatch.records import BlockRange, MevType, filter_block_range, load_transactions, monthly_overview
from sandwatch.stats import cliffs_delta, mann_whitney_u, quantile, summarize
from sandwatch.synth import SynthConfig, generate_chain, oracle_detect

SMALL = SynthConfig(seed=12, n_blocks=200, n_addresses=50, span_days=10, window_days=3)


def _chain():
    return generate_chain(SMALL)


# -- ingest ----------------------------------------------------------------------

def test_header_only_file_is_empty(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("block_number,tx_index,timestamp,tx_hash,from,to\n")
    assert load_transactions(p) == []


def test_block_range_filters():
    records, _, _ = _chain()
    lo, hi = records[0].block_number, records[-1].block_number
    assert filter_block_range(records, BlockRange(lo, hi)) == records
    assert filter_block_range(records, BlockRange(hi + 1, hi + 5)) == []
    mid = records[len(records) // 2].block_number
    parts = filter_block_range(records, BlockRange(lo, mid)) + filter_block_range(records, BlockRange(mid + 1, hi))
    assert len(parts) == len(records)


def test_monthly_overview_single_private_and_brute_force():
    [m] = monthly_overview([tx(1, 0, "a", vis=PRIV)], [BlockRange(1, 1, "m")]).months
    assert (m.total_tx_count, m.private_count, m.public_count) == (1, 1, 0)

    records, _, _ = _chain()
    blocks = sorted({r.block_number for r in records})[:10]
    subset = [r for r in records if r.block_number in blocks]
    ranges = [BlockRange(blocks[0], blocks[4], "a"), BlockRange(blocks[5], blocks[9], "b")]
    ov = monthly_overview(subset, ranges)
    for row, rng in zip(ov.months, ranges):
        inside = [r for r in subset if rng.start_block <= r.block_number <= rng.end_block]
        assert row.total_tx_count == len(inside)
        assert row.public_count == sum(1 for r in inside if r.visibility is PUB)
        assert row.block_count == len({r.block_number for r in inside})


# -- enrich ----------------------------------------------------------------------

def test_label_fixture_ranges_and_cache(tmp_path):
    labels = [MevLabel("0x" + format(b, "064x"), MevType.SWAP, block_number=b) for b in range(10, 21)]
    fx = tmp_path / "labels.jsonl"
    write_label_file(labels, fx)
    client = LabelClient(ProviderConfig(fixture_path=str(fx)))
    got = client.fetch_labels(BlockRange(12, 14))
    assert got == [l for l in labels if 12 <= l.block_number <= 14]
    first = client.request_count
    assert client.fetch_labels(BlockRange(12, 14)) == got
    assert client.request_count == first

    write_label_file(labels[:5], fx)
    assert len(LabelClient(ProviderConfig(fixture_path=str(fx))).fetch_labels(BlockRange(0, 100))) == 5


def test_apply_labels_examples():
    recs = [tx(1, i, "a", vis=PUB) for i in range(3)]
    assert all(r.mev_type is MevType.NONE for r in apply_labels(recs, []))
    out = apply_labels(recs, [MevLabel(recs[1].tx_hash, MevType.FRONTRUN)])
    assert [r.mev_type for r in out].count(MevType.FRONTRUN) == 1

    records, labels, _ = _chain()
    bare = [r.__class__(r.block_number, r.tx_index, r.timestamp, r.tx_hash, r.sender, r.destination, r.visibility)
            for r in records]
    relabelled = apply_labels(bare, labels)
    assert collections.Counter(r.mev_type for r in relabelled) == collections.Counter(r.mev_type for r in records)


def test_crosstab_examples():
    [row] = visibility_mev_crosstab([tx(1, 0, "a", MevType.SWAP, PUB)])
    assert (row.visibility, row.mev_type, row.count) == (PUB, MevType.SWAP, 1)
    records, _, _ = _chain()
    sample = records[:200]
    tally = {}
    for vis in (PUB, PRIV):
        for mev in MevType:
            n = 0
            for r in sample:
                if r.visibility is vis and r.mev_type is mev:
                    n += 1
            if n:
                tally[(vis, mev)] = n
    assert {(r.visibility, r.mev_type): r.count for r in visibility_mev_crosstab(sample)} == tally


# -- detect ----------------------------------------------------------------------

def test_sort_canonical_examples():
    records, _, _ = _chain()
    assert sort_canonical(records) == records
    assert sort_canonical(list(reversed(records))) == records
    shuffled = records[:500]
    random.Random(1).shuffle(shuffled)
    by_key = {}
    for r in shuffled:
        by_key[(r.block_number, r.tx_index)] = r
    assert sort_canonical(shuffled) == [by_key[k] for k in sorted(by_key)]


def test_counters_and_registry():
    assert count_events(detect_all(block_of(1, [("a", N), ("b", V), ("a", B)]))[0]).to_dict() == {
        "private_attacks": 0, "private_victims": 0, "public_attacks": 0, "public_victims": 0}

    records, _, _ = _chain()
    events, registry, counters = detect_all(records)
    oracle = [e for block in split_blocks(records) for e in oracle_detect(block)]
    priv = [e for e in oracle if e.any_private_victim]
    assert counters.private_attacks == len(priv)
    assert counters.public_attacks == len(oracle) - len(priv)
    assert counters.private_victims == len({v.tx_hash for e in oracle for v in e.victims if v.visibility is PRIV})
    tally = collections.Counter(e.attacker for e in priv)
    assert dict(registry.top_private()) == dict(tally)
    public_only = [e for e in events if not e.any_private_victim]
    assert link_private_attackers(public_only).private_attackers == {}


def test_fork_filter_examples():
    records, _, truth = _chain()
    events, _, _ = detect_all(records)
    assert apply_fork_filter(events, []) == (events, 0)
    assert apply_fork_filter(events, {e.block_number for e in events}) == ([], len(events))
    _, removed = apply_fork_filter(events, truth.fork_blocks)
    assert removed == len({e.key for e in events if e.block_number in set(truth.fork_blocks)})


def test_one_block_one_planted_triple():
    cfg = SynthConfig(seed=3, n_blocks=1, sandwich_rate=1.0, distractor_rate=0.0, self_sandwich_rate=0.0,
                      fork_block_count=0)
    records, _, truth = generate_chain(cfg)
    events, _, _ = detect_all(records)
    assert len(truth.events) >= 1
    assert [(e.block_number, e.frontrun_index, e.backrun_index) for e in events] == [
        (p.block_number, p.frontrun_index, p.backrun_index) for p in truth.events]


# -- analytics -------------------------------------------------------------------

def test_timeline_examples():
    txs = [tx(1, 0, "x", F), tx(1, 1, "u", V), tx(1, 2, "w", V), tx(1, 3, "u", V), tx(1, 4, "x", B),
           tx(2, 0, "q", N)]
    events, _, _ = detect_all(txs)
    tl = build_timelines(txs, events)
    assert tl[addr("q")].exposures == ()
    assert [(e.n, e.tx_index) for e in tl[addr("u")].exposures] == [(1, 1), (2, 3)]
    assert nth_sandwich_cohort(tl, 3, 10 ** 12, 60).members == ()
    assert sandwich_count_distribution(tl).address_counts == {1: 1, 2: 1}
    assert sandwich_count_distribution(build_timelines(txs[-1:], [])).address_counts == {}


def test_exposure_numbering_matches_recount():
    records, _, _ = _chain()
    events, _, _ = detect_all(records)
    tl = build_timelines(records, events)
    public_victims = {v.tx_hash for e in events for v in e.victims if v.visibility is PUB}
    for address in {r.sender for r in records}:
        mine = sorted((r.timestamp, r.block_number, r.tx_index, r.tx_hash) for r in records
                      if r.sender == address and r.tx_hash in public_victims)
        assert [(e.n, e.tx_hash) for e in tl[address].exposures] == [(i + 1, m[3]) for i, m in enumerate(mine)]


def test_reactivation_examples():
    t0 = 1_700_000_000
    txs = [tx(1, 0, "x", F, ts=t0), tx(1, 1, "u", V, ts=t0), tx(1, 2, "w", V, ts=t0), tx(1, 3, "x", B, ts=t0),
           tx(2, 0, "u", N, ts=t0 + 3600), tx(3, 0, "z", N, ts=t0 + 100 * DAY)]
    events, _, _ = detect_all(txs)
    tl = build_timelines(txs, events)
    cohort = nth_sandwich_cohort(tl, 1, t0 + 100 * DAY, 60)
    curve = reactivation_curve(cohort, tl)
    assert curve.cumulative[0] == 1 and curve.cumulative[-1] == 1 and curve.size == 2

    quick = [tx(1, 0, "x", F, ts=t0), tx(1, 1, "u", V, ts=t0), tx(1, 2, "x", B, ts=t0), tx(1, 3, "u", N, ts=t0),
             tx(2, 0, "z", N, ts=t0 + 100 * DAY)]
    tl2 = build_timelines(quick, detect_all(quick)[0])
    assert churn_by_n(tl2, 1, 60, t0 + 100 * DAY).rows[0].churn_rate == 0


def test_no_private_activity_means_zero_adoption():
    cfg = SynthConfig(seed=4, n_blocks=300, n_addresses=60, span_days=20, window_days=3,
                      private_victim_rate=0.0, background_private_rate=0.0, adoption_probability=0.0)
    records, _, _ = generate_chain(cfg)
    public_records = [r.__class__(r.block_number, r.tx_index, r.timestamp, r.tx_hash, r.sender, r.destination,
                                  PUB, r.mev_type, r.protocol, r.user_loss_usd, r.extractor_profit_usd,
                                  r.swap_volume_usd, r.swap_count) for r in records]
    events, _, _ = detect_all(public_records)
    tl = build_timelines(public_records, events)
    table, _ = adoption_progression(tl, max(r.timestamp for r in records), range(1, 4), "all", 3)
    assert all(row.switched_count == 0 for row in table.rows)
    assert any(row.population for row in table.rows)


def test_concentration_examples():
    [ev], _, _ = detect_all(block_of(1, [("a", F), ("u", V, PRIV), ("a", B)]))
    for table in concentration_tables([ev]):
        assert len(table.rows) == 1 and table.rows[0][1] == 1

    records, _, _ = _chain()
    events, _, _ = detect_all(records)
    private = [e for e in events if e.any_private_victim]
    counts = {}
    for e in private:
        counts[e.attacker] = counts.get(e.attacker, 0) + 1
    expected = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:10]
    assert list(concentration_tables(events)[0].rows) == expected


# -- stats -----------------------------------------------------------------------

def test_summary_examples():
    s = summarize([Decimal(x) for x in (1, 2, 3, 4, 5)])
    assert (s.median, s.q1, s.q3, s.max) == (3, 2, 4, 5)
    rng = random.Random(200)
    values = sorted(Decimal(rng.randint(0, 10 ** 6)) / 100 for _ in range(200))
    for p in (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)):
        h = (len(values) - 1) * p
        lo = int(h)
        frac = h - lo
        expected = values[lo] + (values[min(lo + 1, len(values) - 1)] - values[lo]) * Decimal(frac.numerator) / Decimal(frac.denominator)
        assert quantile(values, p) == expected


def test_u_examples():
    xs = [4, 8, 15, 16, 23, 42]
    r = mann_whitney_u(xs, xs)
    assert r.u_statistic == Fraction(len(xs) ** 2, 2) and r.z_score == 0 and r.p_value == 1

    rng = random.Random(9)
    a = [rng.gauss(0, 1) for _ in range(300)]
    b = [rng.gauss(0.5, 1) for _ in range(300)]
    r = mann_whitney_u(a, b)
    pairs = sum(1 if x > y else 0.5 if x == y else 0 for x in a for y in b)
    assert r.u_statistic == pairs
    assert r.p_value < 0.01


def test_delta_examples():
    assert cliffs_delta([2, 2], [1, 1]).exact == 1
    rng = random.Random(300)
    a = [rng.randint(0, 100) for _ in range(300)]
    b = [rng.randint(0, 100) for _ in range(300)]
    brute = sum((x > y) - (x < y) for x in a for y in b)
    assert cliffs_delta(a, b).exact == Fraction(brute, 90_000)
