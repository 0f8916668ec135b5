"""Staged pipeline writing a report bundle to disk.

Every stage records a manifest under ``stages/`` with the digests of what it
read and wrote. A stage refuses to run when its predecessor's manifest is
missing or no longer matches the files on disk.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, fields
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any

import yaml

from . import __version__
from .analytics import (
    build_timelines,
    concentration_tables,
    dataset_end,
    nth_sandwich_cohort,
    private_economics,
    switcher_loss_comparison,
)
from .detect import (
    apply_fork_filter,
    count_events,
    detect_all,
    link_private_attackers,
    load_fork_set,
    read_events,
    usd,
    write_events,
)
from .enrich import LabelClient, ProviderConfig, label_coverage, apply_labels, visibility_mev_crosstab
from .errors import ConfigInvalid, InputError, InvariantViolation, MissingStageInput
from .estimators import BehaviorAnalyzer
from .records import (
    BlockRange,
    label_visibility,
    load_block_ranges,
    load_mempool_index,
    load_transactions,
    mempool_coverage,
    monthly_overview,
    write_transactions,
)
from .reference import REFERENCE_VALUES

log = logging.getLogger(__name__)

STAGES = ("ingest", "enrich", "detect", "analyze", "report")
STAGE_VERSION = 1
WORK_TXS = "work/transactions.jsonl"
WORK_ENRICHED = "work/enriched.jsonl"


@dataclass
class RunConfig:
    transactions: str | None = None
    mempool: str | None = None
    labels: str | None = None
    forks: str | None = None
    block_ranges: str | None = None
    out: str = "out"
    window_days: int = 60
    n_max: int = 10
    adoption_n_max: int = 7
    top_k: int = 10
    strict_visibility_tie: bool = False
    threads: int = 1
    provider_mode: str = "fixture"
    provider_base_url: str | None = None
    provider_batch_size: int = 50
    provider_max_rps: float = 5.0
    provider_cache: str | None = None

    def validate(self) -> None:
        for name in ("window_days", "n_max", "adoption_n_max", "top_k", "threads", "provider_batch_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigInvalid(f"{name} must be an integer, got {v!r}")
        if not isinstance(self.strict_visibility_tie, bool):
            raise ConfigInvalid("strict_visibility_tie must be true or false")
        if self.window_days < 1:
            raise ConfigInvalid("window_days must be >= 1")
        if self.n_max < 1 or self.adoption_n_max < 1:
            raise ConfigInvalid("n_max and adoption_n_max must be >= 1")
        if self.top_k < 1:
            raise ConfigInvalid("top_k must be >= 1")
        if self.threads < 1:
            raise ConfigInvalid("threads must be >= 1")
        for name in ("transactions", "mempool", "labels", "forks", "block_ranges"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigInvalid(f"{name}: no such file {p}")

    def provider(self) -> ProviderConfig:
        return ProviderConfig(
            mode=self.provider_mode,
            fixture_path=self.labels,
            base_url=self.provider_base_url,
            batch_size=self.provider_batch_size,
            max_requests_per_second=self.provider_max_rps,
            cache_path=self.provider_cache,
        )

    def echo(self) -> dict:
        """Config as recorded in manifests: file names only, no run-local settings."""
        out = {}
        for f in fields(self):
            if f.name in ("out", "threads", "provider_cache"):
                continue
            v = getattr(self, f.name)
            if f.name in ("transactions", "mempool", "labels", "forks", "block_ranges") and v is not None:
                v = Path(v).name
            out[f.name] = v
        return out

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
        data = load_mapping(text, path)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys {sorted(unknown)}")
        base = path.parent
        for key in ("transactions", "mempool", "labels", "forks", "block_ranges", "out", "provider_cache"):
            if data.get(key) is not None and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])
        return cls(**data)


# -- helpers -------------------------------------------------------------------

def load_mapping(text: str, path: Path) -> dict:
    """Parse a JSON (by suffix) or YAML config document into a mapping."""
    try:
        data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigInvalid(f"cannot parse {path.name}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{path.name} must hold a mapping")
    return data


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fmt_rate(value: Fraction | None, places: int = 6) -> str:
    if value is None:
        return ""
    d = Decimal(value.numerator) / Decimal(value.denominator)
    return str(d.quantize(Decimal(1).scaleb(-places), rounding=ROUND_HALF_EVEN))


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Stage:
    def __init__(self, name: str, cfg: RunConfig) -> None:
        self.name = name
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.metrics: dict[str, Any] = {}

    def input_file(self, label: str, path: str | Path) -> Path:
        p = Path(path)
        if not p.is_file():
            raise MissingStageInput(f"{self.name}: missing input {p}")
        self.inputs[label] = sha256_file(p)
        return p

    def require(self, stage: str) -> dict:
        """Load a predecessor manifest and verify its outputs are intact."""
        mpath = self.out / "stages" / f"{stage}.json"
        if not mpath.is_file():
            raise MissingStageInput(f"{self.name} needs the {stage} stage output; run `{stage}` first")
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        for rel, digest in manifest["outputs"].items():
            p = self.out / rel
            if not p.is_file() or sha256_file(p) != digest:
                raise MissingStageInput(f"{self.name}: {stage} output {rel} is missing or modified")
        self.inputs[f"stage:{stage}"] = sha256_file(mpath)
        return manifest

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(rel)
        return p

    def finish(self) -> dict:
        manifest = {
            "stage": self.name,
            "stage_version": STAGE_VERSION,
            "package_version": __version__,
            "config": self.cfg.echo(),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {rel: sha256_file(self.out / rel) for rel in sorted(set(self.outputs))},
            "metrics": self.metrics,
        }
        _write_json(self.out / "stages" / f"{self.name}.json", manifest)
        return manifest


# -- stages --------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> dict:
    cfg.validate()
    st = Stage("ingest", cfg)
    if cfg.transactions is None:
        raise ConfigInvalid("ingest needs a transactions file")
    txs = load_transactions(st.input_file("transactions", cfg.transactions))
    if cfg.mempool is not None:
        mempool = load_mempool_index(st.input_file("mempool", cfg.mempool))
        st.metrics["mempool_coverage"] = fmt_rate(mempool_coverage(txs, mempool))
        txs = label_visibility(txs, mempool, strict=cfg.strict_visibility_tie)
    elif any(t.visibility is None for t in txs):
        raise InputError("no mempool index given and some records lack a visibility column value")
    st.metrics["transactions"] = len(txs)

    if cfg.block_ranges is not None:
        ranges = load_block_ranges(st.input_file("block_ranges", cfg.block_ranges))
    elif txs:
        ranges = [BlockRange(txs[0].block_number, txs[-1].block_number, "all")]
    else:
        ranges = []
    overview = monthly_overview(txs, ranges)
    for m in overview.months:
        if m.public_count + m.private_count != m.total_tx_count:
            raise InvariantViolation(f"visibility split does not add up for {m.label}")

    write_transactions(txs, st.path(WORK_TXS))
    _write_csv(st.path("monthly.csv"),
               ["month", "start_block", "end_block", "total_tx_count", "block_count", "public_count", "private_count"],
               [[m.label, m.start_block, m.end_block, m.total_tx_count, m.block_count, m.public_count, m.private_count]
                for m in overview.months])
    _write_csv(st.path("monthly_shares.csv"), ["month", "public_share", "private_share"],
               [[label, fmt_rate(p), fmt_rate(q)] for label, p, q in overview.share_series()])
    return st.finish()


def cmd_enrich(cfg: RunConfig) -> dict:
    cfg.validate()
    st = Stage("enrich", cfg)
    st.require("ingest")
    txs = load_transactions(Path(cfg.out) / WORK_TXS)
    if cfg.provider_mode == "fixture":
        if cfg.labels is None:
            raise ConfigInvalid("enrich needs a labels fixture (or provider_mode http)")
        st.input_file("labels", cfg.labels)
    client = LabelClient(cfg.provider())
    if txs:
        blocks = sorted({t.block_number for t in txs})
        labels = client.fetch_labels(BlockRange(blocks[0], blocks[-1]), blocks)
    else:
        labels = []
    enriched = apply_labels(txs, labels)
    st.metrics["label_coverage"] = fmt_rate(label_coverage(txs, labels))
    st.metrics["labels"] = len(labels)
    write_transactions(enriched, st.path(WORK_ENRICHED))
    rows = visibility_mev_crosstab(enriched)
    if sum(r.count for r in rows) != len(enriched):
        raise InvariantViolation("crosstab does not cover the dataset")
    _write_csv(st.path("crosstab.csv"), ["visibility", "mev_type", "count"],
               [[r.visibility.value, r.mev_type.value, r.count] for r in rows])
    return st.finish()


def cmd_detect(cfg: RunConfig) -> dict:
    cfg.validate()
    st = Stage("detect", cfg)
    st.require("enrich")
    txs = load_transactions(Path(cfg.out) / WORK_ENRICHED)
    events, registry, counters = detect_all(txs, n_jobs=cfg.threads)
    write_events(events, st.path("events.jsonl"))

    counters_doc = {
        "counters": counters.to_dict(),
        "events": len(events),
        "private_attackers": len(registry.private_attackers),
        "total_private_frontruns": registry.total_private_frontruns(),
        "reference": REFERENCE_VALUES,
    }
    _write_json(st.path("detect_counters.json"), counters_doc)

    if cfg.forks is not None:
        forks = load_fork_set(st.input_file("forks", cfg.forks))
        kept, removed = apply_fork_filter(events, forks)
        private_before = count_events(events).private_victims
        private_after = count_events(kept).private_victims
        fork_doc = {
            "fork_blocks": len(forks),
            "events_before": len(events),
            "events_after": len(kept),
            "removed_events": removed,
            "removed_private_events": sum(1 for e in events if e.any_private_victim) - sum(
                1 for e in kept if e.any_private_victim),
            "removed_private_victim_txs": private_before - private_after,
            "counters_after": count_events(kept).to_dict(),
        }
    else:
        fork_doc = {"skipped": "no fork list supplied"}
    _write_json(st.path("fork_report.json"), fork_doc)
    st.metrics.update(counters.to_dict())
    return st.finish()


def _curve_rows(curve) -> list[list]:
    return [[t, fmt_rate(f)] for t, f in enumerate(curve.fractions())]


def cmd_analyze(cfg: RunConfig) -> dict:
    cfg.validate()
    st = Stage("analyze", cfg)
    st.require("detect")
    txs = load_transactions(Path(cfg.out) / WORK_ENRICHED)
    events = read_events(Path(cfg.out) / "events.jsonl")
    if not txs:
        raise InputError("analyze needs at least one transaction")
    model = BehaviorAnalyzer(cfg.window_days, cfg.n_max, cfg.adoption_n_max).fit(txs, events)

    _write_csv(st.path("churn.csv"), ["n", "cohort_size", "reactivated", "churn_rate"],
               [[r.n, r.cohort_size, r.reactivated_count, fmt_rate(r.churn_rate)] for r in model.churn_table_.rows])
    for variant, name in (("all", "adoption_all.csv"), ("reactivated_only", "adoption_reactivated.csv")):
        _write_csv(st.path(name), ["n", "population", "switched", "rate"],
                   [[r.n, r.population, r.switched_count, fmt_rate(r.rate)]
                    for r in model.adoption_tables_[variant].rows])
    skipped = {}
    written = {c.n for c in model.reactivation_curves_}
    for n in range(1, cfg.n_max + 1):
        if n not in written:
            skipped[f"curves/reactivation_n{n:02d}.csv"] = "empty cohort"
    for curve in model.reactivation_curves_:
        _write_csv(st.path(f"curves/reactivation_n{curve.n:02d}.csv"), ["day", "cum_fraction"], _curve_rows(curve))
    for variant, tag in (("all", "all"), ("reactivated_only", "reactivated")):
        for curve in model.adoption_curves_[variant]:
            name = f"curves/adoption_{tag}_n{curve.n:02d}.csv"
            if curve.size:
                _write_csv(st.path(name), ["day", "cum_fraction"], _curve_rows(curve))
            else:
                skipped[name] = "empty adoption population"
    st.metrics["skipped"] = skipped
    hist = model.exposure_histogram_
    _write_csv(st.path("exposure_histogram.csv"), ["n_sandwiches", "address_count", "total_tx_count"],
               [[k, hist.address_counts[k], hist.tx_counts[k]] for k in hist.address_counts])

    # reactivation curve end + churn must agree for every cohort
    for row, curve in zip([r for r in model.churn_table_.rows if r.cohort_size], model.reactivation_curves_):
        if curve.final + row.churn_rate != 1:
            raise InvariantViolation(f"curve/churn mismatch at n={row.n}")
    st.metrics["dataset_end_ts"] = model.end_ts_
    return st.finish()


def _summary_doc(summary) -> dict | None:
    return None if summary is None else summary.to_dict()


def cmd_report(cfg: RunConfig) -> dict:
    cfg.validate()
    st = Stage("report", cfg)
    st.require("analyze")
    txs = load_transactions(Path(cfg.out) / WORK_ENRICHED)
    events = read_events(Path(cfg.out) / "events.jsonl")

    attackers, victims, destinations = concentration_tables(events, cfg.top_k)
    for table, name in ((attackers, "top_attackers.csv"), (victims, "top_victims.csv"),
                        (destinations, "top_destinations.csv")):
        _write_csv(st.path(name), ["rank", "address", "count"],
                   [[i, addr, n] for i, (addr, n) in enumerate(table.rows, start=1)])
    registry = link_private_attackers(events)
    full_attackers = concentration_tables(events, None)[0]
    if sum(n for _, n in full_attackers.rows) != registry.total_private_frontruns():
        raise InvariantViolation("attacker concentration does not match the registry")

    def econ(evs) -> dict:
        e = private_economics(evs)
        return {
            "private_attacks": e["private_attacks"],
            "private_victim_txs": e["private_victim_txs"],
            "loss_values_missing": e["loss_values_missing"],
            "profit_values_incomplete": e["profit_values_incomplete"],
            "total_victim_loss_usd": usd(e["total_victim_loss_usd"]),
            "total_attacker_profit_usd": usd(e["total_attacker_profit_usd"]),
            "loss_summary": _summary_doc(e["loss_summary"]),
            "profit_summary": _summary_doc(e["profit_summary"]),
        }

    doc: dict[str, Any] = {"private_path": econ(events), "reference": REFERENCE_VALUES}
    if cfg.forks is not None:
        kept, _ = apply_fork_filter(events, load_fork_set(st.input_file("forks", cfg.forks)))
        doc["private_path_fork_filtered"] = econ(kept)
    else:
        doc["private_path_fork_filtered"] = {"skipped": "no fork list supplied"}

    if txs:
        timelines = build_timelines(txs, events)
        cohort = nth_sandwich_cohort(timelines, 1, dataset_end(txs), cfg.window_days)
        cmp = switcher_loss_comparison(cohort, timelines, events)
    else:
        cmp = None
    if cmp is None:
        doc["switcher_loss_comparison"] = {"skipped": "need both switchers and non-switchers with known losses"}
    else:
        doc["switcher_loss_comparison"] = {
            "orientation": "switchers vs non-switchers",
            "switchers": cmp["switchers"],
            "non_switchers": cmp["non_switchers"],
            "mann_whitney": cmp["mann_whitney"].to_dict(),
            "cliffs_delta": cmp["cliffs_delta"].cliffs_delta,
        }
    _write_json(st.path("economics.json"), doc)
    manifest = st.finish()
    _write_bundle_manifest(cfg)
    return manifest


def _write_bundle_manifest(cfg: RunConfig) -> None:
    out = Path(cfg.out)
    stages = {}
    files = {}
    for name in STAGES:
        m = json.loads((out / "stages" / f"{name}.json").read_text(encoding="utf-8"))
        stages[name] = {"stage_version": m["stage_version"], "inputs": m["inputs"], "metrics": m["metrics"]}
        files.update(m["outputs"])
    bundle = {
        "package_version": __version__,
        "config": cfg.echo(),
        "stages": stages,
        "files": dict(sorted(files.items())),
    }
    _write_json(out / "manifest.json", bundle)


STAGE_COMMANDS = {
    "ingest": cmd_ingest,
    "enrich": cmd_enrich,
    "detect": cmd_detect,
    "analyze": cmd_analyze,
    "report": cmd_report,
}


def run_all(cfg: RunConfig) -> None:
    for name in STAGES:
        log.info("stage %s", name)
        STAGE_COMMANDS[name](cfg)
