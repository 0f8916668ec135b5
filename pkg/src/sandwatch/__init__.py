"""Sandwich-attack detection and post-attack behavior analytics for Ethereum transaction streams."""

from .analytics import (
    adoption_progression,
    adoption_rate,
    build_timelines,
    churn_by_n,
    concentration_tables,
    nth_sandwich_cohort,
    reactivation_curve,
    sandwich_count_distribution,
)
from .detect import apply_fork_filter, detect_all, detect_block, link_private_attackers, sort_canonical
from .enrich import apply_labels, fetch_labels, visibility_mev_crosstab
from .records import (
    BlockRange,
    MevType,
    TxRecord,
    Visibility,
    filter_block_range,
    label_visibility,
    load_transactions,
    monthly_overview,
)
from .stats import cliffs_delta, mann_whitney_u, summarize

__version__ = "0.1.0"

__all__ = [
    "BlockRange", "MevType", "TxRecord", "Visibility",
    "adoption_progression", "adoption_rate", "apply_fork_filter", "apply_labels", "build_timelines",
    "churn_by_n", "cliffs_delta", "concentration_tables", "detect_all", "detect_block", "fetch_labels",
    "filter_block_range", "label_visibility", "link_private_attackers", "load_transactions",
    "mann_whitney_u", "monthly_overview", "nth_sandwich_cohort", "reactivation_curve",
    "sandwich_count_distribution", "sort_canonical", "summarize", "visibility_mev_crosstab",
]
