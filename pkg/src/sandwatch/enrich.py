"""MEV label providers, label application and the visibility x MEV crosstab."""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
import time
from collections import Counter
from dataclasses import dataclass, replace
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import httpx

from .errors import (
    CacheCorrupt,
    ConfigInvalid,
    ConflictingLabels,
    MalformedResponse,
    ProviderUnavailable,
)
from .records import BlockRange, MevType, TxRecord, Visibility, canonical_hash

log = logging.getLogger(__name__)

RETRY_BACKOFF_S = (1.0, 2.0, 4.0)


@dataclass(frozen=True)
class MevLabel:
    tx_hash: str
    mev_type: MevType
    protocol: str | None = None
    user_loss_usd: Decimal | None = None
    extractor_profit_usd: Decimal | None = None
    swap_volume_usd: Decimal | None = None
    swap_count: int | None = None
    block_number: int | None = None

    @classmethod
    def from_dict(cls, obj: Mapping) -> "MevLabel":
        """Parse a provider object; unknown extra keys are ignored."""
        if not isinstance(obj, Mapping):
            raise ValueError("label is not an object")
        raw_hash = obj.get("tx_hash")
        if not raw_hash:
            raise ValueError("label without tx_hash")
        block = obj.get("block_number")
        count = obj.get("swap_count")
        protocol = obj.get("protocol")
        return cls(
            tx_hash=canonical_hash(str(raw_hash)),
            mev_type=MevType.parse(obj.get("mev_type")),
            protocol=str(protocol) if protocol not in (None, "") else None,
            user_loss_usd=_money(obj.get("user_loss_usd")),
            extractor_profit_usd=_money(obj.get("extractor_profit_usd")),
            swap_volume_usd=_money(obj.get("swap_volume_usd")),
            swap_count=int(count) if count not in (None, "") else None,
            block_number=int(block) if block not in (None, "") else None,
        )

    def to_dict(self) -> dict:
        return {
            "tx_hash": self.tx_hash,
            "block_number": self.block_number,
            "mev_type": self.mev_type.value,
            "protocol": self.protocol,
            "user_loss_usd": None if self.user_loss_usd is None else str(self.user_loss_usd),
            "extractor_profit_usd": None if self.extractor_profit_usd is None else str(self.extractor_profit_usd),
            "swap_volume_usd": None if self.swap_volume_usd is None else str(self.swap_volume_usd),
            "swap_count": self.swap_count,
        }


def _money(value) -> Decimal | None:
    if value is None or value == "":
        return None
    # str() first so binary floats from JSON never leak into the decimal
    try:
        d = Decimal(str(value))
    except InvalidOperation:
        raise ValueError(f"not a decimal amount: {value!r}") from None
    if not d.is_finite():
        raise ValueError(f"not a finite amount: {value!r}")
    return d


@dataclass(frozen=True)
class ProviderConfig:
    mode: str = "fixture"
    fixture_path: str | None = None
    base_url: str | None = None
    batch_size: int = 50
    max_requests_per_second: float = 5.0
    cache_path: str | None = None
    timeout_s: float = 30.0

    def __post_init__(self) -> None:
        if self.mode not in ("fixture", "http"):
            raise ConfigInvalid(f"unknown provider mode {self.mode!r}")
        if self.mode == "http" and not self.base_url:
            raise ConfigInvalid("http provider mode requires base_url")
        if self.mode == "fixture" and not self.fixture_path:
            raise ConfigInvalid("fixture provider mode requires fixture_path")
        if self.batch_size < 1:
            raise ConfigInvalid("batch_size must be positive")
        if self.max_requests_per_second <= 0:
            raise ConfigInvalid("max_requests_per_second must be positive")


def read_label_file(path: str | Path) -> list[MevLabel]:
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                labels.append(MevLabel.from_dict(json.loads(line, parse_float=Decimal)))
            except (ValueError, json.JSONDecodeError) as exc:
                raise MalformedResponse(f"{Path(path).name}:{lineno}: {exc}") from None
    return labels


def write_label_file(labels: Iterable[MevLabel], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(json.dumps(label.to_dict(), separators=(",", ":")) + "\n")


class LabelCache:
    """Per-block JSONL files named ``{block_number}.jsonl``.

    Writes go through a temp file and ``os.replace`` so concurrent readers
    never observe a half-written block.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    def path(self, block_number: int) -> Path:
        return self.root / f"{block_number}.jsonl"

    def get(self, block_number: int) -> list[MevLabel] | None:
        p = self.path(block_number)
        if not p.exists():
            return None
        try:
            return read_label_file(p)
        except MalformedResponse as exc:
            raise CacheCorrupt(str(exc)) from None

    def put(self, block_number: int, labels: Sequence[MevLabel]) -> None:
        with self._write_lock:
            fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
            os.close(fd)
            write_label_file(labels, tmp)
            os.replace(tmp, self.path(block_number))


class FixtureSource:
    def __init__(self, path: str | Path) -> None:
        self.by_block: dict[int, list[MevLabel]] = {}
        for label in read_label_file(path):
            if label.block_number is None:
                raise MalformedResponse(f"fixture label {label.tx_hash} lacks block_number")
            self.by_block.setdefault(label.block_number, []).append(label)

    def known_blocks(self, block_range: BlockRange) -> list[int]:
        return sorted(b for b in self.by_block if b in block_range)

    def fetch_block(self, block_number: int) -> list[MevLabel]:
        return list(self.by_block.get(block_number, ()))


class HttpSource:
    """``GET {base_url}/mevBlock/{block}`` with pacing and bounded retries."""

    def __init__(
        self,
        base_url: str,
        max_requests_per_second: float,
        timeout_s: float = 30.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self._min_interval = 1.0 / max_requests_per_second
        self._client = httpx.Client(timeout=timeout_s, transport=transport)
        self._sleep = sleep
        self._clock = clock
        self._last: float | None = None
        self._lock = threading.Lock()

    def known_blocks(self, block_range: BlockRange) -> list[int]:
        return list(range(block_range.start_block, block_range.end_block + 1))

    def _pace(self) -> None:
        with self._lock:
            now = self._clock()
            if self._last is not None:
                wait = self._min_interval - (now - self._last)
                if wait > 0:
                    self._sleep(wait)
                    now = self._clock()
            self._last = now

    def fetch_block(self, block_number: int) -> list[MevLabel]:
        url = f"{self.base_url}/mevBlock/{block_number}"
        last_error = None
        for attempt in range(len(RETRY_BACKOFF_S) + 1):
            if attempt:
                self._sleep(RETRY_BACKOFF_S[attempt - 1])
            self._pace()
            try:
                resp = self._client.get(url)
            except httpx.HTTPError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise MalformedResponse(f"{url}: HTTP {resp.status_code}")
            return _parse_block_payload(resp.text, block_number)
        raise ProviderUnavailable(f"{url}: {last_error}")

    def close(self) -> None:
        self._client.close()


def _parse_block_payload(text: str, block_number: int) -> list[MevLabel]:
    try:
        payload = json.loads(text, parse_float=Decimal)
    except json.JSONDecodeError as exc:
        raise MalformedResponse(f"block {block_number}: invalid JSON ({exc.msg})") from None
    if not isinstance(payload, list):
        raise MalformedResponse(f"block {block_number}: expected a JSON array")
    labels = []
    for obj in payload:
        try:
            label = MevLabel.from_dict(obj)
        except (ValueError, TypeError) as exc:
            raise MalformedResponse(f"block {block_number}: {exc}") from None
        if label.block_number is None:
            label = replace(label, block_number=block_number)
        labels.append(label)
    return labels


class LabelClient:
    """Fetches labels block by block through a source, caching every block it touches."""

    def __init__(self, cfg: ProviderConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.monotonic) -> None:
        self.cfg = cfg
        if cfg.mode == "fixture":
            self.source = FixtureSource(cfg.fixture_path)
        else:
            self.source = HttpSource(cfg.base_url, cfg.max_requests_per_second, cfg.timeout_s,
                                     transport=transport, sleep=sleep, clock=clock)
        self.cache = LabelCache(cfg.cache_path) if cfg.cache_path else None
        self._memory: dict[int, list[MevLabel]] = {}
        self.request_count = 0

    def _block(self, block_number: int) -> list[MevLabel]:
        if block_number in self._memory:
            return self._memory[block_number]
        labels = self.cache.get(block_number) if self.cache else None
        if labels is None:
            self.request_count += 1
            labels = self.source.fetch_block(block_number)
            if self.cache:
                self.cache.put(block_number, labels)
        self._memory[block_number] = labels
        return labels

    def fetch_labels(self, block_range: BlockRange, blocks: Iterable[int] | None = None) -> list[MevLabel]:
        if blocks is None:
            wanted = self.source.known_blocks(block_range)
        else:
            wanted = sorted({b for b in blocks if b in block_range})
        out: list[MevLabel] = []
        for i in range(0, len(wanted), self.cfg.batch_size):
            for b in wanted[i:i + self.cfg.batch_size]:
                out.extend(self._block(b))
        return _dedupe(out)


def _dedupe(labels: Iterable[MevLabel]) -> list[MevLabel]:
    seen: dict[str, MevLabel] = {}
    for label in labels:
        prior = seen.get(label.tx_hash)
        if prior is not None and prior != label:
            raise ConflictingLabels(f"conflicting labels for {label.tx_hash}")
        seen[label.tx_hash] = label
    return list(seen.values())


def fetch_labels(block_range: BlockRange, cfg: ProviderConfig,
                 blocks: Iterable[int] | None = None) -> list[MevLabel]:
    return LabelClient(cfg).fetch_labels(block_range, blocks)


def apply_labels(txs: Sequence[TxRecord], labels: Iterable[MevLabel]) -> list[TxRecord]:
    """Copy MEV type and monetized fields from labels onto matching records.

    Unlabeled records are returned unchanged.
    """
    by_hash = {label.tx_hash: label for label in _dedupe(labels)}
    out = []
    for tx in txs:
        label = by_hash.get(tx.tx_hash)
        if label is None:
            out.append(tx)
            continue
        out.append(replace(
            tx,
            mev_type=label.mev_type,
            protocol=label.protocol,
            user_loss_usd=label.user_loss_usd,
            extractor_profit_usd=label.extractor_profit_usd,
            swap_volume_usd=label.swap_volume_usd,
            swap_count=label.swap_count,
        ))
    return out


def label_coverage(txs: Sequence[TxRecord], labels: Iterable[MevLabel]) -> Fraction:
    if not txs:
        return Fraction(1)
    hashes = {label.tx_hash for label in labels}
    return Fraction(sum(1 for tx in txs if tx.tx_hash in hashes), len(txs))


@dataclass(frozen=True)
class CrosstabRow:
    visibility: Visibility
    mev_type: MevType
    count: int


def visibility_mev_crosstab(txs: Iterable[TxRecord]) -> list[CrosstabRow]:
    counts = Counter((tx.visibility, tx.mev_type) for tx in txs)
    if None in {vis for vis, _ in counts}:
        raise ValueError("crosstab needs visibility-labeled records")
    rows = [CrosstabRow(vis, mev, n) for (vis, mev), n in counts.items()]
    rows.sort(key=lambda r: (-r.count, r.visibility.value, r.mev_type.value))
    return rows
