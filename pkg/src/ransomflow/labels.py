"""Address annotations and entity attributions."""
from __future__ import annotations

import csv
import enum
import io
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .addr import Address, ValidationFailure, validate

UNLABELED_CLUSTER = "Unlabeled Cluster"


class LabelError(Exception):
    pass


class InvalidAddressRow(LabelError):
    pass


class UnknownCategory(LabelError):
    pass


def _squash(text: str) -> str:
    return re.sub(r"[^a-z]", "", text.lower())


class Category(str, enum.Enum):
    SALARY = "Salary"
    REIMBURSEMENT = "Reimbursement"
    REIMBURSEMENT_SALARY = "Reimbursement/Salary"
    RANSOM_PAYMENT = "Ransom Payment"
    CLAIMED_OWNERSHIP = "Claimed Ownership"
    SERVICES = "Services"
    VICTIM_NAME = "Victim Name"

    @classmethod
    def parse(cls, text: str) -> "Category":
        key = _squash(text)
        found = _CATEGORY_ALIASES.get(key)
        if found is None:
            raise UnknownCategory(f"unknown category {text!r}")
        return found


_CATEGORY_ALIASES = {_squash(c.value): c for c in Category}
_CATEGORY_ALIASES.update({
    "salaryreimbursement": Category.REIMBURSEMENT_SALARY,
    "ransompaymentaddress": Category.RANSOM_PAYMENT,
    "ransom": Category.RANSOM_PAYMENT,
    "victimnamebearing": Category.VICTIM_NAME,
    "service": Category.SERVICES,
})

EXPENSE_CATEGORIES = (Category.SALARY, Category.REIMBURSEMENT_SALARY, Category.REIMBURSEMENT)


class Source(str, enum.Enum):
    LEAK = "LeakAnnotation"
    CROWDSOURCED = "CrowdsourcedDataset"
    DERIVED = "Derived"

    @classmethod
    def parse(cls, text: str) -> "Source":
        key = _squash(text)
        for member in cls:
            if _squash(member.value) == key:
                return member
        aliases = {"leak": cls.LEAK, "crowdsourced": cls.CROWDSOURCED, "ransomwhere": cls.CROWDSOURCED}
        if key in aliases:
            return aliases[key]
        raise LabelError(f"unknown label source {text!r}")


class EntityKind(str, enum.Enum):
    EXCHANGE = "Exchange"
    MIXER = "Mixer"
    MARKETPLACE = "Marketplace"
    ILLEGAL_SERVICE = "IllegalService"
    UNLABELED_CLUSTER = "UnlabeledCluster"
    OTHER = "Other"

    @classmethod
    def parse(cls, text: str) -> "EntityKind":
        key = _squash(text)
        for member in cls:
            if _squash(member.value) == key:
                return member
        raise LabelError(f"unknown entity kind {text!r}")


class Risk(str, enum.Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"
    SANCTIONED = "Sanctioned"

    @classmethod
    def parse(cls, text: str) -> "Risk | None":
        key = _squash(text)
        if not key:
            return None
        for member in cls:
            if member.value.lower() == key:
                return member
        raise LabelError(f"unknown risk tier {text!r}")


@dataclass(frozen=True)
class LabelRecord:
    address: str
    category: Category
    owner_alias: str = ""
    note: str = ""
    source: Source = Source.LEAK
    run_id: str = ""  # detector run that produced a Derived record

    def __post_init__(self):
        if self.source is Source.DERIVED and not self.run_id:
            raise LabelError(f"derived label for {self.address} lacks a producing run id")

    @property
    def source_field(self) -> str:
        if self.source is Source.DERIVED:
            return f"{self.source.value}:{self.run_id}"
        return self.source.value

    def sort_key(self):
        return (self.address, self.category.value, self.source_field, self.owner_alias, self.note)


@dataclass(frozen=True)
class EntityRecord:
    key: str  # canonical address or cluster id
    entity_name: str
    kind: EntityKind
    risk: Risk | None = None

    def __post_init__(self):
        if self.kind is EntityKind.EXCHANGE and self.risk is None:
            raise LabelError(f"exchange {self.entity_name!r} needs a risk tier")

    @property
    def bucket(self) -> str:
        """Flow-report bucket: entity kind, with risk tier for exchanges."""
        if self.kind is EntityKind.EXCHANGE:
            return f"Exchange ({self.risk.value} risk)"
        if self.kind is EntityKind.UNLABELED_CLUSTER:
            return UNLABELED_CLUSTER
        if self.risk is Risk.SANCTIONED:
            return f"{self.kind.value} (Sanctioned)"
        return self.kind.value

    @property
    def is_low_risk_source(self) -> bool:
        return self.kind is EntityKind.UNLABELED_CLUSTER or (
            self.kind is EntityKind.EXCHANGE and self.risk is Risk.LOW
        )


def _address_or_raise(text: str, where: str) -> str:
    text = text.strip()
    result = validate(text) if text else ValidationFailure(text, "length")
    if isinstance(result, ValidationFailure):
        raise InvalidAddressRow(f"{where}: invalid address {text!r} ({result.rule})")
    return result.canonical


def _rows(path: str | Path, fields: tuple[str, ...]) -> Iterable[tuple[str, dict[str, str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return
        header = [h.strip().lower() for h in reader.fieldnames]
        reader.fieldnames = header
        if header[0] != fields[0]:
            raise LabelError(f"{path}: expected header starting with {fields[0]!r}, got {header}")
        for lineno, row in enumerate(reader, 2):
            yield f"{path}:{lineno}", {k: (row.get(k) or "").strip() for k in fields}


class LabelStore:
    """Label records indexed by address. Records keep their load order."""

    FIELDS = ("address", "category", "alias", "note", "source")

    def __init__(self, records: Iterable[LabelRecord] = ()):
        self.records: tuple[LabelRecord, ...] = tuple(dict.fromkeys(records))
        by_address: dict[str, list[LabelRecord]] = defaultdict(list)
        for rec in self.records:
            by_address[rec.address].append(rec)
        self._by_address = {a: tuple(v) for a, v in by_address.items()}

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelStore) and sorted(self.records, key=LabelRecord.sort_key) == sorted(
            other.records, key=LabelRecord.sort_key)

    def for_address(self, address) -> tuple[LabelRecord, ...]:
        key = address.canonical if isinstance(address, Address) else str(address)
        return self._by_address.get(key, ())

    def addresses(self, category: Category | None = None, source: Source | None = None) -> list[str]:
        """Distinct addresses matching the filters, in first-seen order."""
        out = dict.fromkeys(
            r.address for r in self.records
            if (category is None or r.category is category) and (source is None or r.source is source)
        )
        return list(out)

    def category_counts(self) -> Counter:
        """Distinct addresses per category."""
        return Counter({c: len(self.addresses(c)) for c in Category if self.addresses(c)})

    def merged(self, records: Iterable[LabelRecord]) -> "LabelStore":
        return LabelStore(self.records + tuple(records))

    def dumps(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.FIELDS)
        for r in sorted(self.records, key=LabelRecord.sort_key):
            writer.writerow([r.address, r.category.value, r.owner_alias, r.note, r.source_field])
        return buf.getvalue()

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def export_published(self, path: str | Path, categories: Iterable[Category] | None = None) -> None:
        """One ``address,category`` line per labeled address."""
        wanted = set(categories) if categories is not None else None
        rows = sorted({(r.address, r.category.value) for r in self.records
                       if wanted is None or r.category in wanted})
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("address,category\n")
            for address, category in rows:
                fh.write(f"{address},{category}\n")


def parse_source(text: str) -> tuple[Source, str]:
    head, _, run_id = text.partition(":")
    source = Source.parse(head) if head.strip() else Source.LEAK
    return source, run_id.strip()


def load_labels(path: str | Path) -> LabelStore:
    records = []
    for where, row in _rows(path, LabelStore.FIELDS):
        address = _address_or_raise(row["address"], where)
        try:
            category = Category.parse(row["category"])
        except UnknownCategory as exc:
            raise UnknownCategory(f"{where}: {exc}") from None
        source, run_id = parse_source(row["source"])
        try:
            records.append(LabelRecord(address, category, row["alias"], row["note"], source, run_id))
        except LabelError as exc:
            raise LabelError(f"{where}: {exc}") from None
    return LabelStore(records)


class EntityStore:
    """Entity attributions keyed by address or cluster id, plus cluster membership."""

    FIELDS = ("address_or_cluster", "entity", "kind", "risk")

    def __init__(self, records: Iterable[EntityRecord] = (), membership: Mapping[str, str] | None = None):
        self.records: dict[str, EntityRecord] = {}
        for rec in records:
            if rec.key in self.records and self.records[rec.key] != rec:
                raise LabelError(f"conflicting entity rows for {rec.key}")
            self.records[rec.key] = rec
        names = {r.entity_name for r in self.records.values() if r.kind is EntityKind.UNLABELED_CLUSTER}
        if len(names) > 1:
            raise LabelError(f"more than one unlabeled-cluster entity name: {sorted(names)}")
        self.membership: dict[str, str] = dict(membership or {})

    def __len__(self) -> int:
        return len(self.records)

    def with_membership(self, membership: Mapping[str, str]) -> "EntityStore":
        merged = dict(self.membership)
        merged.update(membership)
        return EntityStore(self.records.values(), merged)

    def entity_of(self, address) -> EntityRecord | None:
        key = address.canonical if isinstance(address, Address) else str(address)
        rec = self.records.get(key)
        if rec is not None:
            return rec
        cluster = self.membership.get(key)
        return self.records.get(cluster) if cluster is not None else None

    def is_exchange(self, address) -> bool:
        rec = self.entity_of(address)
        return rec is not None and rec.kind is EntityKind.EXCHANGE

    def dumps(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.FIELDS)
        for key in sorted(self.records):
            r = self.records[key]
            writer.writerow([r.key, r.entity_name, r.kind.value, r.risk.value if r.risk else ""])
        return buf.getvalue()

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def entity_of(address, store: EntityStore) -> EntityRecord | None:
    """Direct address match first, then cluster membership."""
    return store.entity_of(address)


def load_entities(path: str | Path, membership_path: str | Path | None = None) -> EntityStore:
    records = []
    for where, row in _rows(path, EntityStore.FIELDS):
        key = row["address_or_cluster"]
        if not key:
            raise LabelError(f"{where}: empty address_or_cluster")
        result = validate(key)
        if isinstance(result, Address):
            key = result.canonical
        try:
            records.append(EntityRecord(key, row["entity"], EntityKind.parse(row["kind"]), Risk.parse(row["risk"])))
        except LabelError as exc:
            raise LabelError(f"{where}: {exc}") from None
    membership = load_membership(membership_path) if membership_path else None
    return EntityStore(records, membership)


def load_membership(path: str | Path) -> dict[str, str]:
    """Read ``address,cluster`` rows."""
    out = {}
    for where, row in _rows(path, ("address", "cluster")):
        out[_address_or_raise(row["address"], where)] = row["cluster"]
    return out


def dump_membership(membership: Mapping[str, str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("address,cluster\n")
        for address in sorted(membership):
            fh.write(f"{address},{membership[address]}\n")


def read_address_list(path: str | Path) -> list[str]:
    """Addresses from the first column of a file, skipping an ``address`` header."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not row[0].strip() or row[0].strip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() == "address":
                continue
            out.append(_address_or_raise(row[0], f"{path}:{lineno}"))
    return list(dict.fromkeys(out))
