"""Income/expense tables, payment-origin tables, per-alias earnings and fund flows."""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Sequence

from .heuristics import UNKNOWN, RansomVerdict, Strain, funding_shares
from .labels import EXPENSE_CATEGORIES, Category, EntityStore, LabelStore, Source
from .ledger import TxGraph
from .valuation import RateTable, to_cents, usd_exact, usd_value

ZERO = Decimal("0.00")

INCOME_ROWS = (
    "Ransom payments in leaked dataset",
    "Ransom payments (crowdsourced)",
    "Likely ransom payments (Conti)",
    "Likely ransom payments (Ryuk)",
)
EXPENSE_ROWS = tuple(c.value for c in EXPENSE_CATEGORIES)


@dataclass(frozen=True)
class SummaryRow:
    group: str  # "income" or "expense"
    category: str
    usd_total: Decimal
    address_count: int


@dataclass(frozen=True)
class EconomicSummary:
    income: tuple[SummaryRow, ...]
    expenses: tuple[SummaryRow, ...]
    overlap_count: int = 0  # addresses listed by more than one income source

    @property
    def total_income(self) -> SummaryRow:
        return _total("income", "Total income", self.income)

    @property
    def total_expenses(self) -> SummaryRow:
        return _total("expense", "Total expenses", self.expenses)

    def row(self, category: str) -> SummaryRow:
        for r in self.income + self.expenses:
            if r.category == category:
                return r
        raise KeyError(category)

    def rows(self) -> list[SummaryRow]:
        return [*self.income, self.total_income, *self.expenses, self.total_expenses]


def _total(group: str, name: str, rows: Sequence[SummaryRow]) -> SummaryRow:
    return SummaryRow(group, name, sum((r.usd_total for r in rows), ZERO), sum(r.address_count for r in rows))


def address_received_usd(g: TxGraph, address: str, rates: RateTable) -> Decimal:
    """USD received by ``address``, each credit valued at its own day's close."""
    if address not in g:
        return ZERO
    return sum((usd_value(tx.paid_to(address), tx.time, rates) for tx in g.funding(address)), ZERO)


def _row(group: str, name: str, addresses: Iterable[str], g: TxGraph, rates: RateTable) -> SummaryRow:
    addresses = list(dict.fromkeys(addresses))
    total = sum((address_received_usd(g, a, rates) for a in addresses), ZERO)
    return SummaryRow(group, name, total, len(addresses))


def income_groups(labels: LabelStore, verdicts: Iterable[RansomVerdict]) -> tuple[dict[str, list[str]], int]:
    """Addresses per income row after de-duplication (first source wins), and
    the number of addresses dropped as overlaps."""
    leak = labels.addresses(Category.RANSOM_PAYMENT, Source.LEAK)
    crowd = labels.addresses(Category.RANSOM_PAYMENT, Source.CROWDSOURCED)
    positives = [v for v in verdicts if v.positive]
    conti = [v.address for v in positives if v.strain is Strain.CONTI]
    ryuk = [v.address for v in positives if v.strain is Strain.RYUK]
    taken: set[str] = set()
    overlap = 0
    groups = {}
    for name, members in zip(INCOME_ROWS, (leak, crowd, conti, ryuk)):
        kept = []
        for a in dict.fromkeys(members):
            if a in taken:
                overlap += 1
                continue
            taken.add(a)
            kept.append(a)
        groups[name] = kept
    return groups, overlap


def summarize(labels: LabelStore, verdicts: Iterable[RansomVerdict], g: TxGraph, rates: RateTable) -> EconomicSummary:
    groups, overlap = income_groups(labels, verdicts)
    income = tuple(_row("income", name, groups[name], g, rates) for name in INCOME_ROWS)
    expenses = tuple(_row("expense", c.value, labels.addresses(c), g, rates) for c in EXPENSE_CATEGORIES)
    return EconomicSummary(income, expenses, overlap)


# -- origins ------------------------------------------------------------------------

@dataclass(frozen=True)
class OriginRow:
    entity: str
    confirmed_usd: Decimal
    likely_usd: Decimal

    @property
    def total_usd(self) -> Decimal:
        return self.confirmed_usd + self.likely_usd


def attributed_usd(address: str, g: TxGraph, entities: EntityStore, rates: RateTable) -> dict[str, Fraction]:
    """Unrounded USD per funding entity for one address; unknown excluded."""
    out: dict[str, Fraction] = defaultdict(Fraction)
    if address not in g:
        return out
    for tx, shares in funding_shares(address, g, entities):
        for name, sats in shares.items():
            if name != UNKNOWN:
                out[name] += usd_exact(sats, tx.time, rates)
    return out


def origin_table(verdicts: Iterable[RansomVerdict], confirmed: Iterable[str], g: TxGraph,
                 entities: EntityStore, rates: RateTable) -> list[OriginRow]:
    """Origin entities of confirmed and likely ransom payments, largest first."""
    confirmed = list(dict.fromkeys(confirmed))
    confirmed_set = set(confirmed)
    likely = [v.address for v in verdicts if v.positive and v.address not in confirmed_set]
    sums: dict[str, list[Fraction]] = defaultdict(lambda: [Fraction(0), Fraction(0)])
    for column, addresses in enumerate((confirmed, list(dict.fromkeys(likely)))):
        for a in addresses:
            for name, usd in attributed_usd(a, g, entities, rates).items():
                sums[name][column] += usd
    rows = [OriginRow(name, to_cents(c), to_cents(lk)) for name, (c, lk) in sums.items()]
    return sorted(rows, key=lambda r: (-r.total_usd, r.entity))


# -- aliases ------------------------------------------------------------------------

def alias_earnings(labels: LabelStore, g: TxGraph, rates: RateTable) -> dict[str, Decimal]:
    """USD received per alias over the addresses it claimed, highest first."""
    owned: dict[str, list[str]] = defaultdict(list)
    for rec in labels.records:
        if rec.category is Category.CLAIMED_OWNERSHIP and rec.owner_alias:
            owned[rec.owner_alias].append(rec.address)
    totals = {
        alias: sum((address_received_usd(g, a, rates) for a in dict.fromkeys(addrs)), ZERO)
        for alias, addrs in owned.items()
    }
    return dict(sorted(totals.items(), key=lambda kv: (-kv[1], kv[0])))


# -- flows --------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowEdge:
    source: str
    target: str
    usd: Decimal


@dataclass
class FlowReport:
    """Two-stage flow: funding bucket -> address category -> destination bucket."""

    inflows: dict[tuple[str, str], Fraction] = field(default_factory=dict)
    outflows: dict[tuple[str, str], Fraction] = field(default_factory=dict)

    def edges(self) -> list[FlowEdge]:
        out = [FlowEdge(s, t, to_cents(v)) for (s, t), v in sorted(self.inflows.items())]
        out += [FlowEdge(s, t, to_cents(v)) for (s, t), v in sorted(self.outflows.items())]
        return [e for e in out if e.usd > 0]

    def __bool__(self) -> bool:
        return bool(self.inflows or self.outflows)

    def category_inflow(self, category: str) -> Fraction:
        return sum((v for (_, c), v in self.inflows.items() if c == category), Fraction(0))

    def category_outflow(self, category: str) -> Fraction:
        return sum((v for (c, _), v in self.outflows.items() if c == category), Fraction(0))


def _bucket(entities: EntityStore, address: str) -> str | None:
    rec = entities.entity_of(address)
    return rec.bucket if rec is not None else None


def flow_report(labels: LabelStore, g: TxGraph, entities: EntityStore, rates: RateTable) -> FlowReport:
    """Aggregate one-hop funding sources and spend destinations of labeled
    addresses into entity buckets. Unknown counterparties are left out."""
    inflows: dict[tuple[str, str], Fraction] = defaultdict(Fraction)
    outflows: dict[tuple[str, str], Fraction] = defaultdict(Fraction)
    seen: set[tuple[str, str]] = set()
    for rec in labels.records:
        key = (rec.address, rec.category.value)
        if key in seen or rec.address not in g:
            continue
        seen.add(key)
        category = rec.category.value
        for tx in g.funding(rec.address):
            credit = tx.paid_to(rec.address)
            input_total = tx.input_total
            if input_total == 0:
                continue
            for slot in tx.inputs:
                if slot.address == rec.address:
                    continue
                bucket = _bucket(entities, slot.address)
                if bucket is not None:
                    sats = Fraction(credit) * slot.value_sats / input_total
                    inflows[(bucket, category)] += usd_exact(sats, tx.time, rates)
        for tx in g.spending(rec.address):
            if tx.input_total == 0:
                continue
            share = Fraction(tx.spent_from(rec.address), tx.input_total)
            for slot in tx.outputs:
                if slot.address == rec.address:
                    continue
                bucket = _bucket(entities, slot.address)
                if bucket is not None:
                    outflows[(category, bucket)] += usd_exact(share * slot.value_sats, tx.time, rates)
    return FlowReport(dict(inflows), dict(outflows))


# -- rendering ------------------------------------------------------------------------

def _csv(rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def summary_csv(summary: EconomicSummary) -> str:
    rows = [("group", "category", "usd_total", "address_count")]
    rows += [(r.group, r.category, f"{r.usd_total:.2f}", r.address_count) for r in summary.rows()]
    rows.append(("note", "income_overlap_addresses", "", summary.overlap_count))
    return _csv(rows)


def origins_csv(rows: Iterable[OriginRow]) -> str:
    out = [("entity", "confirmed_usd", "likely_usd", "total_usd")]
    out += [(r.entity, f"{r.confirmed_usd:.2f}", f"{r.likely_usd:.2f}", f"{r.total_usd:.2f}") for r in rows]
    return _csv(out)


def aliases_csv(earnings: dict[str, Decimal]) -> str:
    return _csv([("alias", "usd_total"), *((a, f"{v:.2f}") for a, v in earnings.items())])


def flows_csv(report: FlowReport) -> str:
    return _csv([("source", "target", "usd"), *((e.source, e.target, f"{e.usd:.2f}") for e in report.edges())])


def _dot_id(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def flows_dot(report: FlowReport) -> str:
    """Graphviz DOT rendering of the flow report, ranked left to right."""
    lines = ["digraph flows {", "  rankdir=LR;"]
    for e in report.edges():
        lines.append(f"  {_dot_id(e.source)} -> {_dot_id(e.target)} [label=\"${e.usd:,.2f}\", weight={e.usd:.2f}];")
    lines.append("}")
    return "\n".join(lines) + "\n"

