"""Full-mainnet reference figures carried into report outputs for context.

These come from a ~76M-transaction Nov 2024 - Feb 2025 mainnet panel and are
not reproducible from bundled data; nothing asserts against them.
"""

REFERENCE_NOTE = "paper-scale reference — not a test target"

REFERENCE_VALUES = {
    "note": REFERENCE_NOTE,
    "private_sandwich_attacks": 2932,
    "private_victim_txs": 3126,
    "private_victim_loss_usd": "409236.97",
    "private_attacker_profit_usd": "293785.95",
    "adoption_rate_n1_all": "37.2%",
    "churn_rate_n1": "7.5%",
    "top_private_attacker_frontruns": 1901,
}
