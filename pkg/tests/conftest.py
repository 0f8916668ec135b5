from __future__ import annotations

import itertools
from decimal import Decimal

import pytest

from sandwatch.records import MevType, TxRecord, Visibility

_hashes = itertools.count(1)

F, B, V, N = MevType.FRONTRUN, MevType.BACKRUN, MevType.SANDWICH_VICTIM, MevType.NONE
PUB, PRIV = Visibility.PUBLIC, Visibility.PRIVATE


def addr(name: str) -> str:
    return "0x" + name.encode().hex().rjust(40, "0")[-40:]


def tx(block: int, idx: int, sender: str, mev: MevType = N, vis: Visibility | None = PUB, *,
       ts: int | None = None, tx_hash: str | None = None, loss: str | None = None,
       profit: str | None = None, dest: str | None = "dex") -> TxRecord:
    return TxRecord(
        block_number=block,
        tx_index=idx,
        timestamp=ts if ts is not None else 1_700_000_000 + 12 * block,
        tx_hash=tx_hash or "0x" + format(next(_hashes), "064x"),
        sender=addr(sender),
        destination=addr(dest) if dest else None,
        visibility=vis,
        mev_type=mev,
        user_loss_usd=Decimal(loss) if loss is not None else None,
        extractor_profit_usd=Decimal(profit) if profit is not None else None,
    )


def block_of(block: int, spec: list[tuple], **kw) -> list[TxRecord]:
    """Build one block from (sender, mev[, vis]) tuples, indices in list order."""
    return [tx(block, i, *row, **kw) for i, row in enumerate(spec)]


@pytest.fixture
def make_tx():
    return tx


# -- acceptance summary ------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def record_acceptance(number: int, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS[number] = (title, ok, detail)
    print(f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"{number:>2} {'PASS' if ok else 'FAIL'}  {title}  {detail}".rstrip())
