"""Estimator-style wrappers so the pipeline composes with scikit-learn tooling.

Each class keeps its hyperparameters in ``__init__`` (so ``get_params`` and
``clone`` work) and stores learned state in trailing-underscore attributes.
"""

from __future__ import annotations

from typing import Iterable, Mapping

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .analytics import (
    adoption_progression,
    build_timelines,
    churn_by_n,
    dataset_end,
    reactivation_curves,
    sandwich_count_distribution,
)
from .detect import SandwichEvent, apply_fork_filter, detect_all
from .enrich import LabelClient, MevLabel, ProviderConfig, apply_labels
from .records import BlockRange, TxRecord, label_visibility, mempool_coverage


def check_transactions(X, require_visibility: bool = False) -> list[TxRecord]:
    """Validate a collection of records and return it as a list."""
    if isinstance(X, (str, bytes)) or not isinstance(X, Iterable):
        raise TypeError(f"expected a collection of TxRecord, got {type(X).__name__}")
    txs = list(X)
    for i, tx in enumerate(txs):
        if not isinstance(tx, TxRecord):
            raise TypeError(f"element {i} is {type(tx).__name__}, not TxRecord")
        if require_visibility and tx.visibility is None:
            raise ValueError(f"record {tx.tx_hash} has no visibility label")
    return txs


def check_events(y) -> list[SandwichEvent]:
    events = list(y)
    for i, ev in enumerate(events):
        if not isinstance(ev, SandwichEvent):
            raise TypeError(f"element {i} is {type(ev).__name__}, not SandwichEvent")
    return events


class VisibilityLabeler(TransformerMixin, BaseEstimator):
    """Learns a mempool index in ``fit`` and labels records in ``transform``."""

    def __init__(self, strict: bool = False):
        self.strict = strict

    def fit(self, X: Mapping[str, int], y=None):
        if not isinstance(X, Mapping):
            raise TypeError("fit expects a mapping tx_hash -> first_seen_ts")
        self.mempool_ = dict(X)
        return self

    def transform(self, X) -> list[TxRecord]:
        check_is_fitted(self, "mempool_")
        txs = check_transactions(X)
        self.coverage_ = mempool_coverage(txs, self.mempool_)
        return label_visibility(txs, self.mempool_, strict=self.strict)


class MevLabeler(TransformerMixin, BaseEstimator):
    """Fetches provider labels for the blocks seen in ``fit`` and applies them."""

    def __init__(self, provider: ProviderConfig | None = None, labels: Iterable[MevLabel] | None = None):
        self.provider = provider
        self.labels = labels

    def fit(self, X, y=None):
        txs = check_transactions(X)
        if self.labels is not None:
            self.labels_ = list(self.labels)
        elif self.provider is not None and txs:
            blocks = {t.block_number for t in txs}
            client = LabelClient(self.provider)
            self.labels_ = client.fetch_labels(BlockRange(min(blocks), max(blocks)), blocks)
            self.request_count_ = client.request_count
        elif self.provider is not None:
            self.labels_ = []
        else:
            raise ValueError("MevLabeler needs either provider or labels")
        return self

    def transform(self, X) -> list[TxRecord]:
        check_is_fitted(self, "labels_")
        return apply_labels(check_transactions(X), self.labels_)


class SandwichDetector(BaseEstimator):
    """``fit`` detects events and builds the attacker registry; ``predict`` returns events."""

    def __init__(self, forks: Iterable[int] | None = None, n_jobs: int = 1):
        self.forks = forks
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        txs = check_transactions(X, require_visibility=True)
        events, registry, counters = detect_all(txs, n_jobs=self.n_jobs)
        self.all_events_ = events
        if self.forks is not None:
            events, self.fork_removed_ = apply_fork_filter(events, self.forks)
        else:
            self.fork_removed_ = 0
        self.events_ = events
        self.registry_ = registry
        self.counters_ = counters
        return self

    def predict(self, X) -> list[SandwichEvent]:
        txs = check_transactions(X, require_visibility=True)
        events, _, _ = detect_all(txs, n_jobs=self.n_jobs)
        if self.forks is not None:
            events, _ = apply_fork_filter(events, self.forks)
        return events

    def fit_predict(self, X, y=None) -> list[SandwichEvent]:
        return self.fit(X).events_


class BehaviorAnalyzer(BaseEstimator):
    """Fits timelines from records (X) and confirmed events (y), then derives
    churn, adoption and incidence curves."""

    def __init__(self, window_days: int = 60, n_max: int = 10, adoption_n_max: int = 7,
                 dataset_end_ts: int | None = None):
        self.window_days = window_days
        self.n_max = n_max
        self.adoption_n_max = adoption_n_max
        self.dataset_end_ts = dataset_end_ts

    def fit(self, X, y):
        txs = check_transactions(X, require_visibility=True)
        events = check_events(y)
        if self.window_days < 1 or self.n_max < 1 or self.adoption_n_max < 1:
            raise ValueError("window_days, n_max and adoption_n_max must be >= 1")
        end = self.dataset_end_ts if self.dataset_end_ts is not None else dataset_end(txs)
        self.end_ts_ = end
        self.timelines_ = build_timelines(txs, events)
        self.churn_table_ = churn_by_n(self.timelines_, self.n_max, self.window_days, end)
        self.reactivation_curves_ = reactivation_curves(
            self.timelines_, end, range(1, self.n_max + 1), self.window_days)
        self.adoption_tables_ = {}
        self.adoption_curves_ = {}
        for variant in ("all", "reactivated_only"):
            table, curves = adoption_progression(
                self.timelines_, end, range(1, self.adoption_n_max + 1), variant, self.window_days)
            self.adoption_tables_[variant] = table
            self.adoption_curves_[variant] = curves
        self.exposure_histogram_ = sandwich_count_distribution(self.timelines_)
        return self
