"""Regenerate the static fixture files in this directory.

    python3 tests/fixtures/build_fixtures.py

Output is deterministic; the files are checked in so tests never depend on
this script, but rerunning it must leave them unchanged.
"""
from __future__ import annotations

import csv
import hashlib
import json
import random
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal
from pathlib import Path

from ransomflow.addr import ScriptKind, make_address

HERE = Path(__file__).resolve().parent
SATS = 100_000_000


def address(label: str, kind: ScriptKind = ScriptKind.P2PKH) -> str:
    size = 32 if kind is ScriptKind.P2WSH else 20
    return make_address(kind, hashlib.sha256(label.encode()).digest()[:size]).canonical


def txid(label: str) -> str:
    return hashlib.sha256(("tx:" + label).encode()).hexdigest()


def unix(y, m, d, h=12) -> int:
    return int(datetime(y, m, d, h, tzinfo=timezone.utc).timestamp())


def tx(label, time, inputs, outputs, fee):
    assert sum(v for _, v in inputs) == sum(v for _, v in outputs) + fee
    return {
        "txid": txid(label), "time": time,
        "inputs": [{"addr": a, "value_sats": v} for a, v in inputs],
        "outputs": [{"addr": a, "value_sats": v} for a, v in outputs],
        "fee_sats": fee,
    }


def write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def rate_rows(start: date, days: int, seed: int, pinned: dict | None = None):
    rng = random.Random(seed)
    price = Decimal("9000.00")
    rows = []
    for i in range(days):
        day = start + timedelta(days=i)
        price = max(Decimal("3000.00"), (price * Decimal(str(1 + rng.uniform(-0.04, 0.045)))).quantize(Decimal("0.01")))
        rows.append((day.isoformat(), str((pinned or {}).get(day, price))))
    return rows


# -- the split example: 22 BTC from Gemini, 25/75 split, leak wallet 3 hops on --------

def build_gemini_split() -> None:
    out = HERE / "gemini_split"
    gemini = address("gemini_split:gemini-hot")
    garantex = address("gemini_split:garantex-deposit")
    ransom = address("gemini_split:ransom", ScriptKind.P2WPKH)
    operator = address("gemini_split:operator", ScriptKind.P2WPKH)
    affiliate = address("gemini_split:affiliate")
    relay = address("gemini_split:relay", ScriptKind.P2SH)
    leak = address("gemini_split:leak-wallet")
    records = [
        tx("gemini_split:pay", unix(2021, 5, 10), [(gemini, 22 * SATS + 30_000)], [(ransom, 22 * SATS)], 30_000),
        # fee comes out of the operator's side, so the small share is a hair under 25%
        tx("gemini_split:split", unix(2021, 5, 11), [(ransom, 22 * SATS)],
           [(operator, 549_980_000), (affiliate, 1_649_970_000)], 50_000),
        tx("gemini_split:operator-out", unix(2021, 5, 13), [(operator, 549_980_000)],
           [(relay, SATS), (garantex, 449_970_000)], 10_000),
        tx("gemini_split:relay-out", unix(2021, 5, 20), [(relay, SATS)], [(leak, SATS - 10_000)], 10_000),
        tx("gemini_split:affiliate-out", unix(2021, 5, 14), [(affiliate, 1_649_970_000)],
           [(garantex, 1_649_960_000)], 10_000),
    ]
    write_jsonl(out / "transactions.jsonl", records)
    write_csv(out / "entities.csv", ("address_or_cluster", "entity", "kind", "risk"), [
        (gemini, "Gemini", "Exchange", "Low"),
        (garantex, "Garantex", "Exchange", "Sanctioned"),
    ])
    (out / "leak_addresses.txt").write_text(leak + "\n", encoding="utf-8")
    (out / "candidates.txt").write_text(ransom + "\n", encoding="utf-8")
    rows = rate_rows(date(2020, 1, 1), 731, seed=2, pinned={date(2021, 5, 10): Decimal("43500.00")})
    write_csv(out / "rates.csv", ("date", "close_usd"), rows)
    (out / "addresses.json").write_text(json.dumps({
        "gemini": gemini, "garantex": garantex, "ransom": ransom, "operator": operator,
        "affiliate": affiliate, "relay": relay, "leak": leak,
    }, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# -- Table III shaped label set ------------------------------------------------------

PAYROLL_ROWS = (
    ("Salary", "LeakAnnotation", 419),
    ("Reimbursement/Salary", "LeakAnnotation", 15),
    ("Reimbursement", "LeakAnnotation", 227),
    ("Ransom Payment", "LeakAnnotation", 5),
    ("Ransom Payment", "CrowdsourcedDataset", 28),
)
PAYROLL_LIKELY = (("Conti", 41), ("Ryuk", 34))


def build_payroll_book() -> None:
    out = HERE / "payroll_book"
    rng = random.Random(3)
    kinds = (ScriptKind.P2PKH, ScriptKind.P2SH, ScriptKind.P2WPKH)
    funder = address("t3:funder")
    labels, records = [], []
    seq = 0

    def credit(target: str, n: int) -> None:
        nonlocal seq
        for _ in range(n):
            seq += 1
            day = date(2019, 6, 1) + timedelta(days=rng.randrange(0, 900))
            t = int(datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp()) + rng.randrange(86400)
            value = rng.randrange(50_000, 3 * SATS)
            fee = rng.randrange(1_000, 20_000)
            records.append(tx(f"t3:{seq}", t, [(funder, value + fee)], [(target, value)], fee))

    for category, source, count in PAYROLL_ROWS:
        for i in range(count):
            a = address(f"t3:{category}:{source}:{i}", kinds[i % 3])
            labels.append((a, category, "", "", source))
            credit(a, 1 + rng.randrange(3))
    # carried but excluded from income/expense math
    for i in range(4):
        a = address(f"t3:services:{i}")
        labels.append((a, "Services", "", "hosting", "LeakAnnotation"))
        credit(a, 1)
    # a salary address also claimed by an alias; counted once in the salary row
    for i, alias in enumerate(("buza", "mango", "stern")):
        a = address(f"t3:Salary:LeakAnnotation:{i}", kinds[i % 3])
        labels.append((a, "Claimed Ownership", alias, "", "LeakAnnotation"))
    verdicts = []
    for strain, count in PAYROLL_LIKELY:
        for i in range(count):
            a = address(f"t3:likely:{strain}:{i}", ScriptKind.P2WPKH)
            credit(a, 1)
            verdicts.append((a, "positive", 20, strain, "0.010000", txid(f"t3:split:{strain}:{i}"),
                             1, 1, 1, "1.000000", 2))
    for i in range(6):
        a = address(f"t3:negative:{i}", ScriptKind.P2WPKH)
        credit(a, 1)
        verdicts.append((a, "negative", "", "", "", "", 1, 0, 1, "1.000000", 3))
    records.sort(key=lambda r: (r["time"], r["txid"]))
    write_jsonl(out / "transactions.jsonl", records)
    write_csv(out / "labels.csv", ("address", "category", "alias", "note", "source"), labels)
    write_csv(out / "verdicts.csv", (
        "address", "verdict", "percent", "strain", "residual", "evidence_txids",
        "reaches_leak", "split_ok", "source_ok", "low_risk_fraction", "leak_hops"), sorted(verdicts))
    write_csv(out / "rates.csv", ("date", "close_usd"), rate_rows(date(2019, 6, 1), 920, seed=4))


# -- split statistics shaped like the reported Conti and Ryuk ranges ----------------

SPLIT_STATS = {
    "conti": [5, 10, 15, 20, 20, 20, 20, 20, 20, 20, 20, 20, 25, 25, 30, 35, 40],
    "ryuk": [10, 15, 20, 25, 30, 35, 35, 35, 35, 35, 35, 40, 40, 45, 45, 50, 50],
}


def build_split_stats() -> None:
    rng = random.Random(5)
    for strain, percents in SPLIT_STATS.items():
        records = []
        rows = []
        for i, pct in enumerate(percents):
            a = address(f"split:{strain}:{i}", ScriptKind.P2WPKH)
            total = rng.randrange(2 * SATS, 40 * SATS)
            fee = rng.randrange(2_000, 60_000)
            small = total * pct // 100
            large = total - small - fee
            t0 = unix(2021 if strain == "conti" else 2019, 1 + i % 12, 1 + i)
            src = address(f"split:{strain}:src:{i}")
            records.append(tx(f"split:{strain}:{i}:in", t0, [(src, total + 1_000)], [(a, total)], 1_000))
            outs = [(address(f"split:{strain}:{i}:op"), small), (address(f"split:{strain}:{i}:aff"), large)]
            rng.shuffle(outs)
            records.append(tx(f"split:{strain}:{i}:out", t0 + 3600, [(a, total)], outs, fee))
            rows.append((a, pct))
        write_jsonl(HERE / "splits" / f"{strain}.jsonl", records)
        write_csv(HERE / "splits" / f"{strain}_percents.csv", ("address", "percent"), rows)


def build_rates_2021() -> None:
    write_csv(HERE / "rates_2021.csv", ("date", "close_usd"), rate_rows(date(2021, 1, 1), 365, seed=6))


if __name__ == "__main__":
    build_gemini_split()
    build_payroll_book()
    build_split_stats()
    build_rates_2021()
