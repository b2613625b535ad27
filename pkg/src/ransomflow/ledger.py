"""Transaction records, the immutable transaction graph, and the caching fetch client."""
from __future__ import annotations

import json
import logging
import re
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable, Iterator, Mapping

import httpx

from .addr import Address, canonical

log = logging.getLogger(__name__)

SATS_PER_BTC = 100_000_000
_TXID = re.compile(r"^[0-9a-f]{64}$")


class LedgerError(Exception):
    pass


class MalformedRecord(LedgerError):
    def __init__(self, position, reason: str):
        super().__init__(f"record {position}: {reason}")
        self.position = position
        self.reason = reason


class ConflictingDuplicate(LedgerError):
    def __init__(self, txid: str):
        super().__init__(f"conflicting records for txid {txid}")
        self.txid = txid


class UnknownAddress(LedgerError, KeyError):
    def __str__(self):
        return f"address not in graph: {self.args[0]}"


class TransportError(LedgerError):
    """Network failure or server error; safe to retry."""


class ServiceRejection(LedgerError):
    """The data service refused the request; not retried."""

    def __init__(self, status: int, body: str):
        super().__init__(f"service rejected request with HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


@dataclass(frozen=True)
class TxSlot:
    address: str
    value_sats: int


@dataclass(frozen=True)
class Transaction:
    txid: str
    time: int  # unix seconds, UTC
    inputs: tuple[TxSlot, ...]
    outputs: tuple[TxSlot, ...]
    fee_sats: int = 0

    @property
    def timestamp(self) -> datetime:
        return datetime.fromtimestamp(self.time, tz=timezone.utc)

    @property
    def is_coinbase(self) -> bool:
        return not self.inputs

    @property
    def input_total(self) -> int:
        return sum(s.value_sats for s in self.inputs)

    @property
    def output_total(self) -> int:
        return sum(s.value_sats for s in self.outputs)

    def input_addresses(self) -> set[str]:
        return {s.address for s in self.inputs}

    def paid_to(self, address: str) -> int:
        return sum(s.value_sats for s in self.outputs if s.address == address)

    def spent_from(self, address: str) -> int:
        return sum(s.value_sats for s in self.inputs if s.address == address)

    def check(self, position=None) -> None:
        where = self.txid if position is None else position
        if not _TXID.match(self.txid):
            raise MalformedRecord(where, "txid must be 64 lowercase hex characters")
        if self.fee_sats < 0 or any(s.value_sats < 0 for s in self.inputs + self.outputs):
            raise MalformedRecord(where, "negative value")
        if not self.outputs:
            raise MalformedRecord(where, "transaction has no outputs")
        if self.is_coinbase:
            if self.fee_sats:
                raise MalformedRecord(where, "coinbase transaction with nonzero fee")
        elif self.input_total != self.output_total + self.fee_sats:
            raise MalformedRecord(
                where,
                f"inputs {self.input_total} != outputs {self.output_total} + fee {self.fee_sats}",
            )

    def to_record(self) -> dict:
        return {
            "txid": self.txid,
            "time": self.time,
            "inputs": [{"addr": s.address, "value_sats": s.value_sats} for s in self.inputs],
            "outputs": [{"addr": s.address, "value_sats": s.value_sats} for s in self.outputs],
            "fee_sats": self.fee_sats,
        }

    @classmethod
    def from_record(cls, rec: Mapping, position=None) -> "Transaction":
        where = rec.get("txid", position) if isinstance(rec, Mapping) else position
        try:
            def slots(key):
                out = []
                for s in rec[key]:
                    value = s["value_sats"]
                    if isinstance(value, bool) or not isinstance(value, int):
                        raise MalformedRecord(where, f"{key} value_sats must be an integer")
                    out.append(TxSlot(canonical(s["addr"]), value))
                return tuple(out)

            fee = rec.get("fee_sats", 0)
            tx_time = rec["time"]
            if isinstance(fee, bool) or not isinstance(fee, int) or not isinstance(tx_time, int):
                raise MalformedRecord(where, "time and fee_sats must be integers")
            tx = cls(str(rec["txid"]).lower(), tx_time, slots("inputs"), slots("outputs"), fee)
        except MalformedRecord:
            raise
        except KeyError as exc:
            raise MalformedRecord(where, f"missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise MalformedRecord(where, str(exc)) from None
        tx.check(where)
        return tx


class TxGraph:
    """Read-only view over a set of transactions with per-address indices.

    Funding and spending indices list txids in (time, txid) order.
    """

    def __init__(self, transactions: Mapping[str, Transaction]):
        self._txs = MappingProxyType(dict(transactions))
        funding: dict[str, list[Transaction]] = defaultdict(list)
        spending: dict[str, list[Transaction]] = defaultdict(list)
        first_seen: dict[str, int] = {}
        for tx in sorted(self._txs.values(), key=lambda t: (t.time, t.txid)):
            for addr in dict.fromkeys(s.address for s in tx.outputs):
                funding[addr].append(tx)
            for addr in dict.fromkeys(s.address for s in tx.inputs):
                spending[addr].append(tx)
            for s in tx.inputs + tx.outputs:
                first_seen.setdefault(s.address, tx.time)
        self._funding = MappingProxyType({a: tuple(v) for a, v in funding.items()})
        self._spending = MappingProxyType({a: tuple(v) for a, v in spending.items()})
        self._first_seen = MappingProxyType(first_seen)

    @property
    def transactions(self) -> Mapping[str, Transaction]:
        return self._txs

    @property
    def first_seen_map(self) -> Mapping[str, int]:
        return self._first_seen

    def __len__(self) -> int:
        return len(self._txs)

    def __contains__(self, address) -> bool:
        return _key(address) in self._first_seen

    def addresses(self) -> list[str]:
        return sorted(self._first_seen)

    def _require(self, address) -> str:
        key = _key(address)
        if key not in self._first_seen:
            raise UnknownAddress(key)
        return key

    def funding(self, address) -> tuple[Transaction, ...]:
        """Transactions paying ``address``."""
        return self._funding.get(self._require(address), ())

    def spending(self, address) -> tuple[Transaction, ...]:
        """Transactions with ``address`` among their inputs."""
        return self._spending.get(self._require(address), ())

    def first_seen(self, address) -> int:
        return self._first_seen[self._require(address)]

    def extend(self, records: Iterable[Transaction | Mapping]) -> "TxGraph":
        """A new graph with ``records`` added; this graph is left untouched."""
        return ingest(records, base=self)

    def iter_transactions(self) -> Iterator[Transaction]:
        return iter(sorted(self._txs.values(), key=lambda t: (t.time, t.txid)))


def _key(address) -> str:
    return address.canonical if isinstance(address, Address) else str(address)


def ingest(records: Iterable[Transaction | Mapping], base: TxGraph | None = None) -> TxGraph:
    """Build a :class:`TxGraph`. Identical duplicates are ignored; a txid seen
    with different content raises :class:`ConflictingDuplicate`."""
    txs: dict[str, Transaction] = dict(base.transactions) if base is not None else {}
    for position, rec in enumerate(records):
        if isinstance(rec, Transaction):
            tx = rec
            tx.check(position)
        else:
            tx = Transaction.from_record(rec, position)
        seen = txs.get(tx.txid)
        if seen is not None and seen != tx:
            raise ConflictingDuplicate(tx.txid)
        txs[tx.txid] = tx
    return TxGraph(txs)


def read_transactions(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"{path}:{lineno}", f"invalid JSON: {exc.msg}") from None


def load_graph(paths: Iterable[str | Path]) -> TxGraph:
    def records():
        for p in paths:
            yield from read_transactions(p)
    return ingest(records())


def dump_transactions(txs: Iterable[Transaction], path: str | Path) -> None:
    ordered = sorted(txs, key=lambda t: (t.time, t.txid))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tx in ordered:
            fh.write(json.dumps(tx.to_record(), sort_keys=True, separators=(",", ":")) + "\n")


def received_total(g: TxGraph, address) -> int:
    """Satoshis paid to ``address`` across all output slots."""
    key = _key(address)
    return sum(tx.paid_to(key) for tx in g.funding(key))


def sent_total(g: TxGraph, address) -> int:
    key = _key(address)
    return sum(tx.spent_from(key) for tx in g.spending(key))


# -- remote fetch --------------------------------------------------------------

@dataclass
class ClientConfig:
    endpoint: str
    cache_dir: Path
    rate_per_sec: float = 1.0
    page_size: int = 50
    max_retries: int = 3
    timeout: float = 30.0


def parse_rawaddr_tx(raw: Mapping) -> dict:
    """Convert one blockchain.com ``rawaddr`` transaction to an ingest record."""
    inputs = []
    for i in raw.get("inputs", []):
        prev = i.get("prev_out")
        if not prev:
            continue
        if not prev.get("addr"):
            raise MalformedRecord(raw.get("hash"), "input without an address")
        inputs.append({"addr": prev["addr"], "value_sats": prev["value"]})
    outputs = []
    for o in raw.get("out", []):
        if not o.get("addr"):
            if o.get("value", 0):
                raise MalformedRecord(raw.get("hash"), "valued output without an address")
            continue
        outputs.append({"addr": o["addr"], "value_sats": o["value"]})
    return {
        "txid": raw.get("hash"),
        "time": raw.get("time"),
        "inputs": inputs,
        "outputs": outputs,
        "fee_sats": raw.get("fee", 0) if inputs else 0,
    }


class FetchClient:
    """Rate-limited, offline-first client for per-address histories.

    Each address history is cached as ``<cache_dir>/<address>.jsonl`` in the
    ingest format; cached addresses never touch the network.
    """

    def __init__(self, config: ClientConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep, clock: Callable[[], float] = time.monotonic):
        self.config = config
        self.cache_dir = Path(config.cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._http = httpx.Client(base_url=config.endpoint.rstrip("/"), transport=transport,
                                  timeout=config.timeout)
        self._sleep = sleep
        self._clock = clock
        self._lock = threading.Lock()
        self._last_request: float | None = None
        self.requests_made = 0

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def cache_path(self, address: str) -> Path:
        return self.cache_dir / f"{address}.jsonl"

    def _throttle(self) -> None:
        if self.config.rate_per_sec <= 0:
            return
        interval = 1.0 / self.config.rate_per_sec
        if self._last_request is not None:
            wait = self._last_request + interval - self._clock()
            if wait > 0:
                self._sleep(wait)
        self._last_request = self._clock()

    def _get(self, path: str, params: dict) -> dict:
        attempt = 0
        while True:
            with self._lock:
                self._throttle()
                self.requests_made += 1
                try:
                    resp = self._http.get(path, params=params)
                except httpx.TransportError as exc:
                    err: Exception = TransportError(str(exc))
                else:
                    if resp.status_code >= 500 or resp.status_code == 429:
                        err = TransportError(f"HTTP {resp.status_code}")
                    elif resp.status_code >= 400:
                        raise ServiceRejection(resp.status_code, resp.text)
                    else:
                        try:
                            return resp.json()
                        except ValueError:
                            raise MalformedRecord(path, "response is not JSON") from None
            attempt += 1
            if attempt > self.config.max_retries:
                raise err
            log.warning("retrying %s after %s (attempt %d)", path, err, attempt)
            self._sleep(min(2.0 ** attempt, 30.0))

    def fetch_address_history(self, address) -> list[Transaction]:
        key = canonical(address)
        cached = self.cache_path(key)
        if cached.exists():
            return list(ingest(read_transactions(cached)).iter_transactions())
        records = []
        offset = 0
        while True:
            page = self._get(f"/rawaddr/{key}", {"limit": self.config.page_size, "offset": offset})
            raw_txs = page.get("txs")
            if not isinstance(raw_txs, list):
                raise MalformedRecord(key, "response lacks a 'txs' list")
            records.extend(parse_rawaddr_tx(t) for t in raw_txs)
            offset += len(raw_txs)
            if not raw_txs or offset >= int(page.get("n_tx", offset)):
                break
        txs = list(ingest(records).iter_transactions())
        tmp = cached.with_suffix(".tmp")
        dump_transactions(txs, tmp)
        tmp.replace(cached)
        return txs


def fetch_address_history(address, config: ClientConfig, transport: httpx.BaseTransport | None = None) -> list[Transaction]:
    with FetchClient(config, transport) as client:
        return client.fetch_address_history(address)
