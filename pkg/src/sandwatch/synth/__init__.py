"""Synthetic datasets with planted ground truth, plus brute-force oracles."""

from .generator import (
    DISTRACTOR_CATALOGUE,
    GroundTruth,
    PlantedEvent,
    SynthConfig,
    generate_chain,
    month_ranges,
    write_dataset,
)
from .oracles import BehaviorOracleResult, oracle_behavior, oracle_detect

__all__ = [
    "DISTRACTOR_CATALOGUE", "GroundTruth", "PlantedEvent", "SynthConfig", "generate_chain",
    "month_ranges", "write_dataset", "BehaviorOracleResult", "oracle_behavior", "oracle_detect",
]
