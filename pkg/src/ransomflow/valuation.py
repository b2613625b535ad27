"""USD valuation at the daily BTC close."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone, tzinfo
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation, localcontext
from fractions import Fraction
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

CENT = Decimal("0.01")
STRICT = "strict"
CARRY = "carry"


class RateError(Exception):
    pass


class MissingRate(RateError):
    def __init__(self, day: date):
        super().__init__(f"no closing rate for {day.isoformat()}")
        self.day = day


class DuplicateDate(RateError):
    pass


class NonPositiveRate(RateError):
    pass


class UnparseableRow(RateError):
    pass


@dataclass(frozen=True)
class RateTable:
    rates: Mapping[date, Decimal]
    gap_policy: str = STRICT
    tz: tzinfo = field(default=timezone.utc)

    def __post_init__(self):
        if self.gap_policy not in (STRICT, CARRY):
            raise ValueError(f"gap policy must be {STRICT!r} or {CARRY!r}")
        for day, rate in self.rates.items():
            if rate <= 0:
                raise NonPositiveRate(f"{day}: {rate}")
        object.__setattr__(self, "rates", MappingProxyType(dict(sorted(self.rates.items()))))

    def __len__(self) -> int:
        return len(self.rates)

    @property
    def first(self) -> date:
        return next(iter(self.rates))

    @property
    def last(self) -> date:
        return next(reversed(self.rates))

    def gaps(self) -> list[date]:
        """Calendar days missing between the first and last listed dates."""
        if not self.rates:
            return []
        out = []
        day = self.first
        while day <= self.last:
            if day not in self.rates:
                out.append(day)
            day += timedelta(days=1)
        return out

    def with_policy(self, gap_policy: str) -> "RateTable":
        return RateTable(self.rates, gap_policy, self.tz)

    def day_of(self, t: datetime | int) -> date:
        if isinstance(t, int):
            t = datetime.fromtimestamp(t, tz=timezone.utc)
        if t.tzinfo is None:
            t = t.replace(tzinfo=timezone.utc)
        return t.astimezone(self.tz).date()

    def close(self, day: date) -> Decimal:
        rate = self.rates.get(day)
        if rate is not None:
            return rate
        if self.gap_policy == CARRY and self.rates and self.first < day:
            probe = day
            while probe not in self.rates:
                probe -= timedelta(days=1)
            return self.rates[probe]
        raise MissingRate(day)


def load_rates(path: str | Path, gap_policy: str = STRICT) -> RateTable:
    """Read a ``date,close_usd`` file."""
    rates: dict[date, Decimal] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["date", "close_usd"]:
            raise UnparseableRow(f"{path}: expected header 'date,close_usd'")
        for lineno, row in enumerate(reader, 2):
            if not row or not "".join(row).strip():
                continue
            try:
                day = date.fromisoformat(row[0].strip())
                rate = Decimal(row[1].strip())
            except (IndexError, ValueError, InvalidOperation):
                raise UnparseableRow(f"{path}:{lineno}: {','.join(row)!r}") from None
            if not rate.is_finite():
                raise UnparseableRow(f"{path}:{lineno}: rate {rate}")
            if day in rates:
                raise DuplicateDate(f"{path}:{lineno}: {day} listed twice")
            if rate <= 0:
                raise NonPositiveRate(f"{path}:{lineno}: {rate}")
            rates[day] = rate
    return RateTable(rates, gap_policy)


def dump_rates(table: RateTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("date,close_usd\n")
        for day, rate in table.rates.items():
            fh.write(f"{day.isoformat()},{rate}\n")


def usd_value(amount_sats: int, t: datetime | int, rates: RateTable) -> Decimal:
    """``amount_sats`` in USD at the close of the transaction's day, to the cent."""
    rate = rates.close(rates.day_of(t))
    with localcontext() as ctx:
        ctx.prec = 60
        return (Decimal(amount_sats) * rate / Decimal(100_000_000)).quantize(CENT, rounding=ROUND_HALF_EVEN)


def usd_exact(amount_sats: Fraction | int, t: datetime | int, rates: RateTable) -> Fraction:
    """Unrounded USD value; for apportioned amounts that are rounded once at the end."""
    rate = rates.close(rates.day_of(t))
    return Fraction(amount_sats) * Fraction(rate) / 100_000_000


def to_cents(value: Fraction | Decimal) -> Decimal:
    if isinstance(value, Decimal):
        return value.quantize(CENT, rounding=ROUND_HALF_EVEN)
    with localcontext() as ctx:
        ctx.prec = 60
        return (Decimal(value.numerator) / Decimal(value.denominator)).quantize(CENT, rounding=ROUND_HALF_EVEN)
