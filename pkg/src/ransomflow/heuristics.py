"""Split-payment detection, leak reachability, funding attribution, the
likely-ransom classifier, era labeling and co-spend clustering."""
from __future__ import annotations

import csv
import enum
from collections import deque
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from decimal import Decimal
from fractions import Fraction
from typing import Collection, Iterable

from .labels import EntityStore
from .ledger import Transaction, TxGraph, UnknownAddress, _key

UNKNOWN = "unknown"
ERA_CUTOFF = datetime(2020, 3, 1, tzinfo=timezone.utc)
SPLIT_PERCENTS = tuple(range(5, 51, 5))


class Strain(str, enum.Enum):
    RYUK = "Ryuk"
    CONTI = "Conti"


class NoIncomingValue(ValueError):
    pass


@dataclass(frozen=True)
class SplitEvent:
    address: str
    spend_txid: str
    fraction_small: Fraction
    matched_percent: int
    residual_pp: Fraction  # |100 * fraction_small - matched_percent|
    destinations: tuple[str, str]  # (smaller share, larger share)

    @property
    def percent(self) -> float:
        return float(self.fraction_small * 100)


@dataclass(frozen=True)
class Params:
    tol_pp: Decimal = Decimal("0.5")
    max_hops: int = 8
    threshold: Decimal = Decimal("0.99")
    cutoff: datetime = ERA_CUTOFF
    taint_depth: int = 0  # 0 = one-hop attribution

    def __post_init__(self):
        for name in ("tol_pp", "threshold"):
            object.__setattr__(self, name, Decimal(str(getattr(self, name))))
        if self.max_hops < 1:
            raise ValueError("max_hops must be at least 1")
        if self.tol_pp < 0:
            raise ValueError("tol_pp must be non-negative")
        if self.taint_depth < 0:
            raise ValueError("taint_depth must be non-negative")


@dataclass(frozen=True)
class RansomVerdict:
    address: str
    reaches_leak: bool
    split_ok: bool
    source_ok: bool
    strain: Strain | None = None
    split: SplitEvent | None = None
    leak_hops: int | None = None
    low_risk_fraction: Fraction = Fraction(0)
    evidence_txids: tuple[str, ...] = ()
    notes: tuple[str, ...] = field(default=())

    @property
    def positive(self) -> bool:
        return self.reaches_leak and self.split_ok and self.source_ok

    @property
    def failed_criteria(self) -> tuple[str, ...]:
        return tuple(name for name in ("reaches_leak", "split_ok", "source_ok") if not getattr(self, name))


# -- splitting -----------------------------------------------------------------

def first_spend(address, g: TxGraph) -> Transaction | None:
    spends = g.spending(address)
    return spends[0] if spends else None


def split_fraction(tx: Transaction, source: str) -> tuple[Fraction, tuple[str, str]] | None:
    """Smaller share and ordered destinations when ``tx`` pays exactly two
    addresses besides ``source``."""
    paid: dict[str, int] = {}
    for slot in tx.outputs:
        if slot.address != source:
            paid[slot.address] = paid.get(slot.address, 0) + slot.value_sats
    if len(paid) != 2:
        return None
    total = sum(paid.values())
    if total == 0:
        return None
    (a, va), (b, vb) = sorted(paid.items(), key=lambda kv: (kv[1], kv[0]))
    return Fraction(va, total), (a, b)


def nearest_percent(fraction: Fraction) -> tuple[int, Fraction]:
    pct = fraction * 100
    matched = min(SPLIT_PERCENTS, key=lambda p: (abs(pct - p), p))
    return matched, abs(pct - matched)


def detect_split(address, g: TxGraph, tol_pp: Decimal | float | str = Decimal("0.5")) -> SplitEvent | None:
    """Split of the first spend of ``address`` into two wallets at a multiple of 5%."""
    key = _key(address)
    tx = first_spend(key, g)
    if tx is None:
        return None
    found = split_fraction(tx, key)
    if found is None:
        return None
    small, destinations = found
    matched, residual = nearest_percent(small)
    if residual > Fraction(Decimal(str(tol_pp))):
        return None
    return SplitEvent(key, tx.txid, small, matched, residual, destinations)


# -- reachability ------------------------------------------------------------------

def leak_path(address, leak_set: Collection[str], g: TxGraph, max_hops: int = 8,
              entities: EntityStore | None = None) -> list[str] | None:
    """Txids of the shortest forward path from ``address`` to any leak address
    within ``max_hops`` transactions, or ``None``.

    Addresses attributed to an exchange are not expanded further.
    """
    if max_hops < 1:
        raise ValueError("max_hops must be at least 1")
    start = _key(address)
    g.spending(start)  # raises UnknownAddress
    leak = leak_set if isinstance(leak_set, (set, frozenset)) else set(leak_set)
    seen = {start}
    frontier = deque([(start, [])])
    while frontier:
        addr, path = frontier.popleft()
        if len(path) >= max_hops:
            continue
        if addr != start and entities is not None and entities.is_exchange(addr):
            continue
        for tx in g.spending(addr):
            for slot in tx.outputs:
                nxt = slot.address
                if nxt in seen:
                    continue
                seen.add(nxt)
                route = path + [tx.txid]
                if nxt in leak:
                    return route
                frontier.append((nxt, route))
    return None


def reaches_leak(address, leak_set: Collection[str], g: TxGraph, max_hops: int = 8,
                 entities: EntityStore | None = None) -> bool:
    return leak_path(address, leak_set, g, max_hops, entities) is not None


# -- attribution ----------------------------------------------------------------------

def funding_shares(address, g: TxGraph, entities: EntityStore,
                   taint_depth: int = 0, _seen: frozenset = frozenset()) -> list[tuple[Transaction, dict[str, Fraction]]]:
    """Per incoming transaction, satoshis credited to ``address`` apportioned
    across the entity names of the transaction's inputs.

    Value that ``address`` sends to itself is not counted as funding. With
    ``taint_depth > 0`` value from an unattributed input is pushed back through
    that input's own funding (haircut taint), up to that many extra hops.
    """
    key = _key(address)
    seen = _seen | {key}
    out = []
    for tx in g.funding(key):
        credit = tx.paid_to(key)
        if credit == 0:
            continue
        foreign = [s for s in tx.inputs if s.address != key]
        weight = sum(s.value_sats for s in foreign)
        if tx.inputs and weight == 0:
            continue
        own = tx.input_total - weight
        if own:
            credit = Fraction(credit) * weight / tx.input_total
        shares: dict[str, Fraction] = {}
        if not tx.inputs:
            shares[UNKNOWN] = Fraction(credit)
        for slot in foreign:
            part = Fraction(credit) * slot.value_sats / weight
            rec = entities.entity_of(slot.address)
            if rec is not None:
                split = {rec.entity_name: Fraction(1)}
            elif taint_depth > 0 and slot.address not in seen:
                split = _upstream(slot.address, g, entities, taint_depth - 1, seen)
            else:
                split = {UNKNOWN: Fraction(1)}
            for name, frac in split.items():
                shares[name] = shares.get(name, Fraction(0)) + part * frac
        out.append((tx, shares))
    return out


def _upstream(address: str, g: TxGraph, entities: EntityStore, depth: int, seen: frozenset) -> dict[str, Fraction]:
    totals: dict[str, Fraction] = {}
    for _, shares in funding_shares(address, g, entities, depth, seen):
        for name, value in shares.items():
            totals[name] = totals.get(name, Fraction(0)) + value
    grand = sum(totals.values())
    if grand == 0:
        return {UNKNOWN: Fraction(1)}
    return {name: value / grand for name, value in totals.items()}


def source_attribution(address, g: TxGraph, entities: EntityStore, taint_depth: int = 0) -> dict[str, Fraction]:
    """Fraction of received value per funding entity; unattributed value is
    reported under ``"unknown"``. Fractions sum to exactly 1."""
    totals: dict[str, Fraction] = {}
    for _, shares in funding_shares(address, g, entities, taint_depth):
        for name, value in shares.items():
            totals[name] = totals.get(name, Fraction(0)) + value
    grand = sum(totals.values())
    if grand == 0:
        raise NoIncomingValue(f"{_key(address)} has received nothing")
    return {name: value / grand for name, value in sorted(totals.items())}


def low_risk_fraction(attribution: dict[str, Fraction], entities: EntityStore) -> Fraction:
    good = {r.entity_name for r in entities.records.values() if r.is_low_risk_source}
    return sum((v for k, v in attribution.items() if k in good), Fraction(0))


# -- classification -------------------------------------------------------------------

def strain_of(first_seen: int | datetime, cutoff: datetime = ERA_CUTOFF) -> Strain:
    if isinstance(first_seen, int):
        first_seen = datetime.fromtimestamp(first_seen, tz=timezone.utc)
    return Strain.RYUK if first_seen < cutoff else Strain.CONTI


def classify_ransom(address, leak_set: Collection[str], g: TxGraph, entities: EntityStore,
                    params: Params = Params()) -> RansomVerdict:
    key = _key(address)
    if key not in g:
        raise UnknownAddress(key)
    notes = []
    path = leak_path(key, leak_set, g, params.max_hops, entities)
    split = detect_split(key, g, params.tol_pp)
    try:
        fraction = low_risk_fraction(source_attribution(key, g, entities, params.taint_depth), entities)
    except NoIncomingValue:
        fraction = Fraction(0)
        notes.append("no incoming value")
    source_ok = fraction > Fraction(params.threshold)
    evidence = tuple(dict.fromkeys(([split.spend_txid] if split else []) + (path or [])))
    verdict = RansomVerdict(
        address=key,
        reaches_leak=path is not None,
        split_ok=split is not None,
        source_ok=source_ok,
        split=split,
        leak_hops=len(path) if path is not None else None,
        low_risk_fraction=fraction,
        evidence_txids=evidence,
        notes=tuple(notes),
    )
    if verdict.positive:
        verdict = replace(verdict, strain=strain_of(g.first_seen(key), params.cutoff))
    return verdict


def classify_all(addresses: Iterable[str], leak_set: Collection[str], g: TxGraph, entities: EntityStore,
                 params: Params = Params()) -> list[RansomVerdict]:
    leak = frozenset(leak_set)
    return [classify_ransom(a, leak, g, entities, params) for a in addresses]


# -- co-spend clustering --------------------------------------------------------------

class DisjointSet:
    """Union-find with path halving and union by size."""

    def __init__(self, items: Iterable[str] = ()):
        self._parent: dict[str, str] = {}
        self._size: dict[str, int] = {}
        for item in items:
            self.add(item)

    def add(self, item: str) -> None:
        if item not in self._parent:
            self._parent[item] = item
            self._size[item] = 1

    def find(self, item: str) -> str:
        parent = self._parent
        while parent[item] != item:
            parent[item] = parent[parent[item]]
            item = parent[item]
        return item

    def union(self, a: str, b: str) -> str:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]
        return ra

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for item in self._parent:
            out.setdefault(self.find(item), []).append(item)
        return out


@dataclass(frozen=True)
class CoSpendClusters:
    """Partition of graph addresses; each cluster is keyed by its
    lexicographically smallest member."""

    clusters: dict[str, tuple[str, ...]]
    member_of: dict[str, str]

    def representative(self, address) -> str:
        return self.member_of[_key(address)]

    def partition(self) -> set[frozenset[str]]:
        return {frozenset(members) for members in self.clusters.values()}

    def nontrivial(self) -> dict[str, tuple[str, ...]]:
        return {k: v for k, v in self.clusters.items() if len(v) > 1}


def cospend_clusters(g: TxGraph) -> CoSpendClusters:
    ds = DisjointSet(g.addresses())
    for tx in g.transactions.values():
        inputs = sorted(tx.input_addresses())
        for other in inputs[1:]:
            ds.union(inputs[0], other)
    clusters = {}
    member_of = {}
    for members in ds.groups().values():
        ordered = tuple(sorted(members))
        clusters[ordered[0]] = ordered
        for m in ordered:
            member_of[m] = ordered[0]
    return CoSpendClusters(dict(sorted(clusters.items())), member_of)


# -- verdict files ------------------------------------------------------------------

VERDICT_FIELDS = ("address", "verdict", "percent", "strain", "residual", "evidence_txids",
                  "reaches_leak", "split_ok", "source_ok", "low_risk_fraction", "leak_hops")


def verdict_rows(verdicts: Iterable[RansomVerdict]) -> list[tuple]:
    rows = []
    for v in sorted(verdicts, key=lambda v: v.address):
        rows.append((
            v.address,
            "positive" if v.positive else "negative",
            v.split.matched_percent if v.split else "",
            v.strain.value if v.strain else "",
            f"{float(v.split.residual_pp):.6f}" if v.split else "",
            " ".join(v.evidence_txids),
            int(v.reaches_leak), int(v.split_ok), int(v.source_ok),
            f"{float(v.low_risk_fraction):.6f}",
            "" if v.leak_hops is None else v.leak_hops,
        ))
    return rows


def write_verdicts(verdicts: Iterable[RansomVerdict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(VERDICT_FIELDS)
        writer.writerows(verdict_rows(verdicts))


def read_verdicts(path) -> list[RansomVerdict]:
    """Load a verdict file. Split events are not reconstructed."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                out.append(RansomVerdict(
                    address=row["address"],
                    reaches_leak=row["reaches_leak"] == "1",
                    split_ok=row["split_ok"] == "1",
                    source_ok=row["source_ok"] == "1",
                    strain=Strain(row["strain"]) if row["strain"] else None,
                    leak_hops=int(row["leak_hops"]) if row["leak_hops"] else None,
                    low_risk_fraction=Fraction(row["low_risk_fraction"] or "0"),
                    evidence_txids=tuple(row["evidence_txids"].split()),
                ))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad verdict row ({exc})") from None
            if (row["verdict"] == "positive") != out[-1].positive:
                raise ValueError(f"{path}:{lineno}: verdict disagrees with criteria flags")
    return out
