"""Seeded synthetic ransomware economies with ground-truth manifests.

A scenario contains planted split-payment ransom addresses, near-miss
negatives that each break one detection criterion, background wallets,
payroll to leak-labeled addresses, exchanges with risk tiers, an unlabeled
funding cluster, a daily rate series and a chat corpus mentioning the
leak-labeled addresses.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import random
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta, timezone
from decimal import ROUND_HALF_EVEN, Decimal, localcontext
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping

import yaml

from .addr import BASE58_ALPHABET, ScriptKind, make_address

DEFAULT_SPLIT_WEIGHTS = {5: 1, 10: 1, 15: 1, 20: 9, 25: 2, 30: 1, 35: 1, 40: 1}
DEFAULT_EXCHANGES = (
    {"name": "Gemini", "risk": "Low", "weight": 5},
    {"name": "Binance", "risk": "Low", "weight": 2},
    {"name": "Kraken", "risk": "Low", "weight": 1},
    {"name": "Coinbase", "risk": "Low", "weight": 1},
    {"name": "Huobi", "risk": "Medium", "weight": 0},
    {"name": "RiskyEx", "risk": "High", "weight": 0},
    {"name": "Garantex", "risk": "Sanctioned", "weight": 0},
)
DEFAULT_OTHER_ENTITIES = (
    {"name": "Ren Exchange", "kind": "Mixer", "risk": "High"},
    {"name": "Hydra", "kind": "Marketplace", "risk": "Sanctioned"},
    {"name": "DarkService", "kind": "IllegalService", "risk": "High"},
)
CLUSTER_ID = "cluster:unlabeled"
UNLABELED_NAME = "Unlabeled Cluster"
CUTOFF = datetime(2020, 3, 1, tzinfo=timezone.utc)
NEAR_MISS_KINDS = ("split_ok", "reaches_leak", "source_ok")
KIND_WEIGHTS = ((ScriptKind.P2PKH, 50), (ScriptKind.P2SH, 15), (ScriptKind.P2WPKH, 30), (ScriptKind.P2WSH, 5))


class InvalidConfig(ValueError):
    pass


class ManifestMismatch(ValueError):
    pass


@dataclass
class ScenarioConfig:
    seed: int = 0
    victims: int = 100
    near_misses_per_kind: int = 50
    background: int = 750
    split_percent_weights: dict = field(default_factory=lambda: dict(DEFAULT_SPLIT_WEIGHTS))
    operators: int = 6
    affiliates: int = 20
    aliases: int = 40
    salary_addresses: int = 60
    reimbursement_addresses: int = 30
    reimbursement_salary_addresses: int = 4
    claimed_ownership: int = 12
    leak_ransom_addresses: int = 3
    crowdsourced_ransom_addresses: int = 6
    exchanges: list = field(default_factory=lambda: [dict(e) for e in DEFAULT_EXCHANGES])
    other_entities: list = field(default_factory=lambda: [dict(e) for e in DEFAULT_OTHER_ENTITIES])
    addresses_per_entity: int = 3
    unlabeled_cluster_size: int = 6
    unlabeled_share: float = 0.6
    noise_rate: float = 0.5
    fee_sat_per_vbyte: tuple = (1, 60)
    era_start: str = "2019-06-01"
    era_end: str = "2021-12-31"
    cutoff: str = "2020-03-01T00:00:00Z"
    boundary_plants: bool = True
    max_leak_hops: int = 4
    chat_messages: int = 3000
    junk_tokens: int = 40

    def __post_init__(self):
        # normalise weights to exact probabilities
        weights = {int(k): Fraction(str(v)) for k, v in self.split_percent_weights.items()}
        if not weights or any(w < 0 for w in weights.values()) or sum(weights.values()) == 0:
            raise InvalidConfig("split_percent_weights must be non-negative with a positive sum")
        if any(k not in range(5, 51, 5) for k in weights):
            raise InvalidConfig("split percents must be multiples of 5 between 5 and 50")
        total = sum(weights.values())
        self.split_percent_weights = {k: weights[k] / total for k in sorted(weights)}
        for name in ("victims", "near_misses_per_kind", "background", "operators", "affiliates", "aliases",
                     "salary_addresses", "reimbursement_addresses", "reimbursement_salary_addresses",
                     "claimed_ownership", "leak_ransom_addresses", "crowdsourced_ransom_addresses",
                     "chat_messages", "junk_tokens"):
            if int(getattr(self, name)) < 0:
                raise InvalidConfig(f"{name} must be non-negative")
        if self.operators < 1 or self.affiliates < 1 or self.aliases < 2 or self.addresses_per_entity < 1:
            raise InvalidConfig("need at least one operator and affiliate, two aliases, one address per entity")
        if self.unlabeled_cluster_size < 2:
            raise InvalidConfig("unlabeled_cluster_size must be at least 2")
        if not 0 <= self.unlabeled_share <= 1:
            raise InvalidConfig("unlabeled_share must lie in [0, 1]")
        lo, hi = self.fee_sat_per_vbyte
        if not 1 <= lo <= hi:
            raise InvalidConfig("fee_sat_per_vbyte must be a range starting at 1 or more")
        self.fee_sat_per_vbyte = (int(lo), int(hi))
        if not 1 <= self.max_leak_hops <= 8:
            raise InvalidConfig("max_leak_hops must be between 1 and 8")
        if self.era_start_date >= self.era_end_date:
            raise InvalidConfig("era_start must precede era_end")
        if not any(e.get("risk", "").lower() == "low" and e.get("weight", 1) > 0 for e in self.exchanges):
            raise InvalidConfig("need at least one low-risk exchange with positive weight")
        if not any(e.get("risk", "").lower() != "low" for e in self.exchanges):
            raise InvalidConfig("need at least one exchange that is not low risk")
        leak_total = (self.salary_addresses + self.reimbursement_addresses + self.reimbursement_salary_addresses)
        if self.victims + 2 * self.near_misses_per_kind > 0 and leak_total == 0:
            raise InvalidConfig("planted payments need at least one salary/reimbursement address")

    @property
    def era_start_date(self) -> date:
        return date.fromisoformat(str(self.era_start))

    @property
    def era_end_date(self) -> date:
        return date.fromisoformat(str(self.era_end))

    @property
    def cutoff_time(self) -> datetime:
        ts = datetime.fromisoformat(str(self.cutoff).replace("Z", "+00:00"))
        return ts if ts.tzinfo else ts.replace(tzinfo=timezone.utc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_percent_weights"] = {str(k): str(v) for k, v in self.split_percent_weights.items()}
        d["fee_sat_per_vbyte"] = list(self.fee_sat_per_vbyte)
        return d


def load_config(path: str | Path) -> ScenarioConfig:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, Mapping):
        raise InvalidConfig("config must be a mapping")
    known = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
    return ScenarioConfig(**data)


@dataclass
class Scenario:
    """Generated files as text, keyed by file name, plus the manifest."""

    files: dict[str, str]
    manifest: dict

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, text in sorted(self.files.items()):
            path = out / name
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_text(text, encoding="utf-8", newline="")
            tmp.replace(path)
            paths[name] = path
        return paths


def _cents(value: Decimal) -> Decimal:
    return value.quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN)


class _Builder:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.txs: list[dict] = []
        self.used: set[str] = set()
        self.credits: dict[str, list[tuple[int, int]]] = defaultdict(list)
        self.groups: list[list[str]] = []
        self._kinds = [k for k, _ in KIND_WEIGHTS]
        self._kind_w = [w for _, w in KIND_WEIGHTS]

    # -- primitives
    def address(self) -> str:
        while True:
            kind = self.rng.choices(self._kinds, self._kind_w)[0]
            size = 32 if kind is ScriptKind.P2WSH else 20
            a = make_address(kind, self.rng.randbytes(size)).canonical
            if a not in self.used:
                self.used.add(a)
                return a

    def fee(self, n_in: int, n_out: int) -> int:
        vbytes = 11 + 68 * n_in + 31 * n_out
        return vbytes * self.rng.randint(*self.cfg.fee_sat_per_vbyte)

    def tx(self, time: int, inputs: list[tuple[str, int]], outputs: list[tuple[str, int]], fee: int) -> str:
        assert sum(v for _, v in inputs) == sum(v for _, v in outputs) + fee, "unbalanced synthetic tx"
        assert all(v > 0 for _, v in outputs)
        body = {
            "time": time,
            "inputs": [{"addr": a, "value_sats": v} for a, v in inputs],
            "outputs": [{"addr": a, "value_sats": v} for a, v in outputs],
            "fee_sats": fee,
        }
        txid = hashlib.sha256(f"{len(self.txs)}|{json.dumps(body, sort_keys=True)}".encode()).hexdigest()
        body["txid"] = txid
        self.txs.append(body)
        for a, v in outputs:
            self.credits[a].append((time, v))
        return txid

    def pay(self, time: int, sources: list[str], outputs: list[tuple[str, int]]) -> str:
        """Pay ``outputs`` from ``sources``; input values are split evenly."""
        fee = self.fee(len(sources), len(outputs))
        need = sum(v for _, v in outputs) + fee
        base, extra = divmod(need, len(sources))
        inputs = [(s, base + (1 if i < extra else 0)) for i, s in enumerate(sources)]
        return self.tx(time, inputs, outputs, fee)

    def time_in_era(self) -> int:
        start = datetime.combine(self.cfg.era_start_date, datetime.min.time(), tzinfo=timezone.utc)
        end = datetime.combine(self.cfg.era_end_date, datetime.min.time(), tzinfo=timezone.utc)
        return self.rng.randint(int(start.timestamp()), int(end.timestamp()))

    def btc(self, lo: float, hi: float) -> int:
        return int(math.exp(self.rng.uniform(math.log(lo), math.log(hi))) * 1e8)


def generate(cfg: ScenarioConfig) -> Scenario:
    """Build a scenario; equal configs give byte-identical output."""
    b = _Builder(cfg)
    rng = b.rng
    hour, day = 3600, 86400

    # -- entities
    exchanges = {}
    entity_rows = []
    for ex in cfg.exchanges:
        addrs = [b.address() for _ in range(cfg.addresses_per_entity)]
        exchanges[ex["name"]] = {"risk": ex["risk"].capitalize(), "weight": ex.get("weight", 1), "addrs": addrs}
        entity_rows += [(a, ex["name"], "Exchange", ex["risk"].capitalize()) for a in addrs]
    others = {}
    for ent in cfg.other_entities:
        addrs = [b.address() for _ in range(cfg.addresses_per_entity)]
        others[ent["name"]] = addrs
        entity_rows += [(a, ent["name"], ent["kind"], ent.get("risk", "")) for a in addrs]
    entity_rows.append((CLUSTER_ID, UNLABELED_NAME, "UnlabeledCluster", "Low"))
    cluster = [b.address() for _ in range(cfg.unlabeled_cluster_size)]
    b.groups.append(list(cluster))
    t_link = int(datetime.combine(cfg.era_start_date, datetime.min.time(), tzinfo=timezone.utc).timestamp()) - 5 * day
    for i in range(len(cluster) - 1):
        b.pay(t_link + i * hour, [cluster[i], cluster[i + 1]], [(cluster[i + 1], b.btc(1, 10))])

    low_names = [n for n, e in exchanges.items() if e["risk"] == "Low" and e["weight"] > 0]
    low_weights = [exchanges[n]["weight"] for n in low_names]
    risky_names = [n for n, e in exchanges.items() if e["risk"] != "Low"]
    sinks = [a for e in exchanges.values() for a in e["addrs"]]
    other_sinks = [a for addrs in others.values() for a in addrs]

    def clean_source() -> tuple[str, list[str]]:
        if rng.random() < cfg.unlabeled_share:
            return UNLABELED_NAME, rng.sample(cluster, rng.choice((1, 2)))
        name = rng.choices(low_names, low_weights)[0]
        return name, [rng.choice(exchanges[name]["addrs"])]

    # -- leak-labeled addresses and aliases
    aliases = [f"alias{i:03d}" for i in range(cfg.aliases)]
    hub = aliases[0]
    labels: list[tuple[str, str, str, str, str]] = []
    leak_addrs: dict[str, list[str]] = {}
    for cat, n in (("Salary", cfg.salary_addresses), ("Reimbursement", cfg.reimbursement_addresses),
                   ("Reimbursement/Salary", cfg.reimbursement_salary_addresses)):
        leak_addrs[cat] = [b.address() for _ in range(n)]
    payroll_targets = [a for cat in ("Salary", "Reimbursement", "Reimbursement/Salary") for a in leak_addrs[cat]]
    owner = {a: rng.choice(aliases[1:]) for a in payroll_targets}
    for cat in ("Salary", "Reimbursement", "Reimbursement/Salary"):
        for a in leak_addrs[cat]:
            labels.append((a, cat, owner[a], "", "LeakAnnotation"))
    claimed = rng.sample(payroll_targets, min(cfg.claimed_ownership, len(payroll_targets)))
    for a in claimed:
        labels.append((a, "Claimed Ownership", owner[a], "", "LeakAnnotation"))

    # -- planted ransom payments
    positives, near_misses, confirmed = [], [], []
    affiliate_wallets = []
    for _ in range(cfg.affiliates):
        affiliate_wallets.append([b.address() for _ in range(rng.randint(1, 3))])
    affiliate_receipts: dict[int, int] = defaultdict(int)
    affiliate_last: dict[int, int] = defaultdict(int)
    funding_usd_log: dict[str, list[tuple[str, int, Fraction]]] = defaultdict(list)  # addr -> (entity, time, sats)
    unknown_funding: dict[str, int] = defaultdict(int)  # addr -> sats from unattributed payers

    percents = list(cfg.split_percent_weights)
    pweights = [float(cfg.split_percent_weights[p]) for p in percents]
    cutoff_ts = int(cfg.cutoff_time.timestamp())

    def fund(ransom: str, t0: int, dirty: bool) -> int:
        """Victim payment(s) into ``ransom``; returns the total credited."""
        amount = b.btc(0.3, 60)
        total = amount
        if dirty:
            mode = rng.choice(("risky", "mixed", "unknown"))
            if mode == "risky":
                name = rng.choice(risky_names)
                src = rng.choice(exchanges[name]["addrs"])
                b.pay(t0, [src], [(ransom, amount)])
                funding_usd_log[ransom].append((name, t0, Fraction(amount)))
                return total
            name, srcs = clean_source()
            b.pay(t0, srcs, [(ransom, amount)])
            funding_usd_log[ransom].append((name, t0, Fraction(amount)))
            extra = max(1, int(amount * rng.uniform(0.04, 0.6)))
            if mode == "mixed":
                ename = rng.choice(risky_names)
                b.pay(t0 + hour, [rng.choice(exchanges[ename]["addrs"])], [(ransom, extra)])
                funding_usd_log[ransom].append((ename, t0 + hour, Fraction(extra)))
            else:
                b.pay(t0 + hour, [b.address()], [(ransom, extra)])
                unknown_funding[ransom] += extra
            return total + extra
        name, srcs = clean_source()
        b.pay(t0, srcs, [(ransom, amount)])
        funding_usd_log[ransom].append((name, t0, Fraction(amount)))
        roll = rng.random()
        if roll < 0.1:
            more = b.btc(0.1, 5)
            name2, srcs2 = clean_source()
            b.pay(t0 + 2 * hour, srcs2, [(ransom, more)])
            funding_usd_log[ransom].append((name2, t0 + 2 * hour, Fraction(more)))
            total += more
        elif roll < 0.2:
            dust = max(1, int(total * rng.uniform(0.0005, 0.005)))
            b.pay(t0 + hour, [b.address()], [(ransom, dust)])
            unknown_funding[ransom] += dust
            total += dust
        return total

    def leak_chain(start_time: int, first: str, value: int, hops: int, target: str) -> None:
        """Forward ``value`` sitting on ``first`` through ``hops - 1`` more transactions to ``target``."""
        cur, t = first, start_time
        for h in range(1, hops):
            nxt = target if h == hops - 1 else b.address()
            t += rng.randint(1, 72) * hour
            fee = b.fee(1, 1)
            b.tx(t, [(cur, value)], [(nxt, value - fee)], fee)
            value -= fee
            cur = nxt

    def plant(kind: str, t0: int) -> dict:
        """kind: 'positive', 'split_ok', 'reaches_leak', 'source_ok', 'confirmed'."""
        ransom = b.address()
        total = fund(ransom, t0, dirty=(kind == "source_ok"))
        t_split = t0 + rng.randint(3, 48) * hour
        pct = Fraction(rng.choices(percents, pweights)[0])
        three_way = False
        if kind == "split_ok":
            if rng.random() < 0.2:
                three_way = True
            else:
                offset = Fraction(rng.randint(10, 24), 10) * rng.choice((-1, 1))
                pct = pct + offset
                if not 3 <= pct <= 48:
                    pct = pct - 2 * offset
        change = 0
        if kind in ("positive", "confirmed") and rng.random() < 0.1:
            change = max(1, total // rng.randint(50, 500))
        fee = b.fee(1, 3 if (change or three_way) else 2)
        spendable = total - change
        share = int(round(spendable * pct / 100))
        hops = rng.randint(1, cfg.max_leak_hops)
        leak_target = rng.choice(payroll_targets)
        wallet_idx = rng.randrange(len(affiliate_wallets))
        affiliate = rng.choice(affiliate_wallets[wallet_idx])
        if kind == "reaches_leak":
            op_first = b.address()
        else:
            op_first = leak_target if hops == 1 else b.address()
        outputs = [(op_first, share)]
        rest = spendable - share - fee
        if three_way:
            cut = rest // 3
            outputs.append((b.address(), cut))
            rest -= cut
        outputs.append((affiliate, rest))
        if change:
            outputs.append((ransom, change))
        b.tx(t_split, [(ransom, total)], outputs, fee)
        affiliate_receipts[wallet_idx] += rest
        affiliate_last[wallet_idx] = max(affiliate_last[wallet_idx], t_split)
        if kind == "reaches_leak":
            t = t_split + rng.randint(1, 48) * hour
            dead_fee = b.fee(1, 1)
            dest = rng.choice(sinks)
            b.tx(t, [(op_first, share)], [(dest, share - dead_fee)], dead_fee)
        elif hops > 1:
            leak_chain(t_split, op_first, share, hops, leak_target)
        return {"address": ransom, "percent": str(pct), "first_seen": t0, "hops": hops}

    def era_time() -> int:
        return b.time_in_era()

    plant_times = [era_time() for _ in range(cfg.victims)]
    if cfg.boundary_plants and cfg.victims >= 4:
        plant_times[:4] = [cutoff_ts - 1, cutoff_ts, cutoff_ts - day // 2, cutoff_ts + day // 2]
    for t0 in plant_times:
        info = plant("positive", t0)
        info["strain"] = "Ryuk" if t0 < cutoff_ts else "Conti"
        positives.append(info)
    for kind in NEAR_MISS_KINDS:
        for _ in range(cfg.near_misses_per_kind):
            info = plant(kind, era_time())
            near_misses.append({"address": info["address"], "violates": kind})
    for source, n in (("LeakAnnotation", cfg.leak_ransom_addresses),
                      ("CrowdsourcedDataset", cfg.crowdsourced_ransom_addresses)):
        for _ in range(n):
            info = plant("confirmed", era_time())
            confirmed.append({"address": info["address"], "source": source})
            labels.append((info["address"], "Ransom Payment", "", "victim: redacted", source))

    # affiliates cash out everything they received to exchanges or mixers
    for idx, wallet in enumerate(affiliate_wallets):
        received = affiliate_receipts.get(idx, 0)
        if received == 0:
            continue
        per = {a: sum(v for _, v in b.credits[a]) for a in wallet}
        inputs = [(a, v) for a, v in per.items() if v > 0]
        dest = rng.choice(sinks + other_sinks)
        fee = b.fee(len(inputs), 1)
        b.tx(affiliate_last[idx] + rng.randint(1, 10) * day, inputs, [(dest, sum(v for _, v in inputs) - fee)], fee)
        if len(inputs) > 1:
            b.groups.append([a for a, _ in inputs])

    # -- payroll from operator treasuries to leak-labeled addresses
    treasuries = [[b.address() for _ in range(rng.randint(1, 2))] for _ in range(cfg.operators)]
    for wallet in treasuries:
        if len(wallet) > 1:
            b.groups.append(list(wallet))
    treasury_cospent = set()
    for target in payroll_targets:
        for _ in range(rng.randint(0, 2) if b.credits[target] else rng.randint(1, 2)):
            t = era_time()
            if rng.random() < 0.15:
                name = rng.choice(list(exchanges))
                b.pay(t, [rng.choice(exchanges[name]["addrs"])], [(target, b.btc(0.01, 2))])
                continue
            w = rng.randrange(len(treasuries))
            wallet = treasuries[w]
            srcs = list(wallet) if w not in treasury_cospent else [rng.choice(wallet)]
            treasury_cospent.add(w)
            b.pay(t, srcs, [(target, b.btc(0.01, 2))])
    for w, wallet in enumerate(treasuries):
        if len(wallet) > 1 and w not in treasury_cospent:
            b.pay(t_link, list(wallet), [(b.address(), b.btc(0.01, 1))])

    # leak addresses cash out; a few alias groups co-spend
    by_alias: dict[str, list[str]] = defaultdict(list)
    for a in payroll_targets:
        by_alias[owner[a]].append(a)
    grouped_aliases = [al for al in sorted(by_alias) if len(by_alias[al]) > 1][:2]
    spent = set()
    for al in grouped_aliases:
        addrs = by_alias[al]
        inputs = [(a, sum(v for _, v in b.credits[a])) for a in addrs]
        last = max(t for a in addrs for t, _ in b.credits[a])
        fee = b.fee(len(inputs), 1)
        b.tx(last + rng.randint(1, 20) * day, inputs, [(rng.choice(sinks), sum(v for _, v in inputs) - fee)], fee)
        b.groups.append(sorted(addrs))
        spent.update(addrs)
    for a in payroll_targets:
        if a in spent or not b.credits[a]:
            continue
        value = sum(v for _, v in b.credits[a])
        last = max(t for t, _ in b.credits[a])
        dest = rng.choice(sinks + other_sinks)
        fee = b.fee(1, 1)
        if value > fee * 2:
            b.tx(last + rng.randint(1, 20) * day, [(a, value)], [(dest, value - fee)], fee)

    # -- background candidates: a closed set that only pays exchanges, entities, unknowns and itself
    background = [b.address() for _ in range(cfg.background)]
    bg_balance: dict[str, int] = {}
    bg_last: dict[str, int] = {}
    for a in background:
        t = era_time()
        roll = rng.random()
        if roll < 0.6:
            name = rng.choice(list(exchanges))
            srcs = [rng.choice(exchanges[name]["addrs"])]
        elif roll < 0.7:
            srcs = rng.sample(cluster, 1)
        else:
            srcs = [b.address()]
        value = b.btc(0.01, 20)
        b.pay(t, srcs, [(a, value)])
        bg_balance[a], bg_last[a] = value, t
    pairs = set()
    order = list(background)
    rng.shuffle(order)
    n_pairs = len(order) // 20
    for i in range(n_pairs):
        x, y = order[2 * i], order[2 * i + 1]
        pairs.update((x, y))
        inputs = [(x, bg_balance[x]), (y, bg_balance[y])]
        fee = b.fee(2, 1)
        t = max(bg_last[x], bg_last[y]) + rng.randint(1, 30) * day
        b.tx(t, inputs, [(rng.choice(sinks), bg_balance[x] + bg_balance[y] - fee)], fee)
        b.groups.append(sorted((x, y)))
    for a in background:
        if a in pairs or rng.random() < 0.2:
            continue
        n_out = rng.randint(1, 3)
        value = bg_balance[a]
        fee = b.fee(1, n_out)
        if value <= fee + 1000 * n_out:
            continue
        pool = sinks + other_sinks + [b.address()]
        cuts = sorted(rng.sample(range(1, value - fee), n_out - 1))
        parts = [hi - lo for lo, hi in zip([0] + cuts, cuts + [value - fee])]
        outs = [(rng.choice(pool), v) for v in parts if v > 0]
        b.tx(bg_last[a] + rng.randint(1, 30) * day, [(a, value)], outs, fee)

    # -- noise between exchanges and unknown wallets
    for _ in range(int(cfg.noise_rate * (cfg.victims + 3 * cfg.near_misses_per_kind + cfg.background))):
        name = rng.choice(list(exchanges))
        b.pay(era_time(), [rng.choice(exchanges[name]["addrs"])], [(b.address(), b.btc(0.001, 3))])

    # -- rates
    first_day = cfg.era_start_date - timedelta(days=14)
    last_tx_day = max(datetime.fromtimestamp(t["time"], tz=timezone.utc).date() for t in b.txs) if b.txs else cfg.era_end_date
    last_day = max(cfg.era_end_date, last_tx_day) + timedelta(days=7)
    rates = {}
    level = 8000.0
    d = first_day
    while d <= last_day:
        level *= math.exp(rng.gauss(0.0015, 0.035))
        rates[d] = Decimal(f"{level:.2f}")
        d += timedelta(days=1)

    def usd(t: int, sats: int) -> Decimal:
        return _cents(Decimal(sats) * rates[datetime.fromtimestamp(t, tz=timezone.utc).date()] / Decimal(10**8))

    def received_usd(addr: str) -> Decimal:
        return sum((usd(t, v) for t, v in b.credits[addr]), Decimal("0.00"))

    # -- chat corpus
    corpus, mentions, hub_degree, planted = _chat(b, cfg, aliases, hub, payroll_targets, owner)

    # -- manifest and files
    leak_set = sorted({row[0] for row in labels if row[4] == "LeakAnnotation"})
    candidates = sorted([p["address"] for p in positives] + [n["address"] for n in near_misses] + background)
    ledger_usd = {
        "Salary": sum((received_usd(a) for a in leak_addrs["Salary"]), Decimal("0.00")),
        "Reimbursement/Salary": sum((received_usd(a) for a in leak_addrs["Reimbursement/Salary"]), Decimal("0.00")),
        "Reimbursement": sum((received_usd(a) for a in leak_addrs["Reimbursement"]), Decimal("0.00")),
        "Ransom payments in leaked dataset": sum(
            (received_usd(c["address"]) for c in confirmed if c["source"] == "LeakAnnotation"), Decimal("0.00")),
        "Ransom payments (crowdsourced)": sum(
            (received_usd(c["address"]) for c in confirmed if c["source"] == "CrowdsourcedDataset"), Decimal("0.00")),
        "Likely ransom payments (Conti)": sum(
            (received_usd(p["address"]) for p in positives if p["strain"] == "Conti"), Decimal("0.00")),
        "Likely ransom payments (Ryuk)": sum(
            (received_usd(p["address"]) for p in positives if p["strain"] == "Ryuk"), Decimal("0.00")),
    }
    alias_usd: dict[str, Decimal] = defaultdict(lambda: Decimal("0.00"))
    for a in claimed:
        alias_usd[owner[a]] += received_usd(a)

    def origin(addresses: Iterable[str]) -> dict[str, Fraction]:
        acc: dict[str, Fraction] = defaultdict(Fraction)
        for a in addresses:
            for name, t, sats in funding_usd_log[a]:
                acc[name] += sats * Fraction(rates[datetime.fromtimestamp(t, tz=timezone.utc).date()]) / 10**8
        return acc

    conf_origin = origin(c["address"] for c in confirmed)
    like_origin = origin(p["address"] for p in positives)
    origin_usd = {
        name: {"confirmed": str(_cents(_frac_dec(conf_origin.get(name, Fraction(0))))),
               "likely": str(_cents(_frac_dec(like_origin.get(name, Fraction(0)))))}
        for name in sorted(set(conf_origin) | set(like_origin))
    }
    for p in positives:
        log = funding_usd_log[p["address"]]
        fr: dict[str, Fraction] = defaultdict(Fraction)
        for name, _, s in log:
            fr[name] += s
        if unknown_funding[p["address"]]:
            fr["unknown"] += unknown_funding[p["address"]]
        tot = sum(fr.values())
        p["funding"] = {k: str(v / tot) for k, v in sorted(fr.items())}

    manifest = {
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "cutoff": cfg.cutoff_time.strftime("%Y-%m-%dT%H:%M:%SZ"),
        "candidates": candidates,
        "positives": sorted(positives, key=lambda p: p["address"]),
        "near_misses": sorted(near_misses, key=lambda n: n["address"]),
        "confirmed_ransom": sorted(confirmed, key=lambda c: c["address"]),
        "leak_addresses": leak_set,
        "cospend_groups": sorted(sorted(g) for g in b.groups if len(g) > 1),
        "ledger_usd": {k: str(v) for k, v in ledger_usd.items()},
        "address_counts": {
            "Salary": len(leak_addrs["Salary"]),
            "Reimbursement/Salary": len(leak_addrs["Reimbursement/Salary"]),
            "Reimbursement": len(leak_addrs["Reimbursement"]),
            "Claimed Ownership": len(claimed),
        },
        "alias_earnings": {k: str(v) for k, v in sorted(alias_usd.items())},
        "origin_usd": origin_usd,
        "chat": {"planted_addresses": planted, "mentions": mentions, "hub": hub, "hub_degree": hub_degree},
        "split_percent_histogram": dict(sorted(Counter(p["percent"] for p in positives).items())),
    }

    files = {
        "transactions.jsonl": "".join(
            json.dumps(t, sort_keys=True, separators=(",", ":")) + "\n"
            for t in sorted(b.txs, key=lambda t: (t["time"], t["txid"]))),
        "labels.csv": _csv_text(("address", "category", "alias", "note", "source"), sorted(labels)),
        "entities.csv": _csv_text(("address_or_cluster", "entity", "kind", "risk"), sorted(entity_rows)),
        "clusters.csv": _csv_text(("address", "cluster"), sorted((a, CLUSTER_ID) for a in cluster)),
        "rates.csv": "date,close_usd\n" + "".join(f"{d.isoformat()},{r}\n" for d, r in rates.items()),
        "leak_addresses.txt": "".join(a + "\n" for a in leak_set),
        "candidates.txt": "".join(a + "\n" for a in candidates),
        "corpus.jsonl": corpus,
        "manifest.json": json.dumps(manifest, indent=1, sort_keys=True) + "\n",
    }
    return Scenario(files, manifest)


def _frac_dec(value: Fraction) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = 60
        return Decimal(value.numerator) / Decimal(value.denominator)


def _csv_text(header: tuple[str, ...], rows: Iterable[tuple]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


_TEMPLATES = (
    "скинь зп на {a} пожалуйста",
    "salary to {a}",
    "мой кошелек: {a}",
    "reimburse server costs -> {a}, thx",
    "{a}",
    "вот адрес {a} для возмещения",
)
_CHATTER = ("ок", "привет", "когда билд?", "done", "сделал", "ping", "на связи", "check tracker", "ну что там")


def _junk(rng: random.Random) -> str:
    body = "".join(rng.choice(BASE58_ALPHABET) for _ in range(33))
    return "1" + body


def _chat(b: _Builder, cfg: ScenarioConfig, aliases: list[str], hub: str, targets: list[str],
          owner: dict[str, str]) -> tuple[str, int, int, list[str]]:
    rng = b.rng
    start = int(datetime(2020, 7, 1, tzinfo=timezone.utc).timestamp())
    end = int(datetime(2022, 2, 25, tzinfo=timezone.utc).timestamp())
    planted = [a for a in targets if rng.random() < 0.8] if cfg.chat_messages else []
    messages = []
    for a in planted:
        for _ in range(rng.randint(1, 3)):
            sender = owner[a]
            messages.append((sender, hub, rng.choice(_TEMPLATES).format(a=a), "Jabber"))
    for _ in range(cfg.junk_tokens if cfg.chat_messages else 0):
        messages.append((rng.choice(aliases[1:]), rng.choice(aliases), f"тест {_junk(rng)} ignore", "Jabber"))
    filler = max(0, cfg.chat_messages - len(messages))
    for _ in range(filler):
        if rng.random() < 0.35:
            other = rng.choice(aliases[1:])
            pair = (hub, other) if rng.random() < 0.5 else (other, hub)
        else:
            pair = tuple(rng.sample(aliases[1:], 2))
        server = "RocketChat" if rng.random() < 0.05 else "Jabber"
        if server == "RocketChat":
            pair = (pair[0], "general")
        messages.append((pair[0], pair[1], rng.choice(_CHATTER), server))
    rng.shuffle(messages)
    times = sorted(rng.randint(start, end) for _ in messages)
    hub_degree = sum((m[0] == hub) + (m[1] == hub) for m in messages if m[3] == "Jabber")
    lines = []
    for i, ((frm, to, body, server), t) in enumerate(zip(messages, times)):
        ts = datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        lines.append(json.dumps({"id": i, "ts": ts, "from": frm, "to": to, "body": body, "server": server},
                                ensure_ascii=False, sort_keys=True) + "\n")
    mentions = sum(1 for m in messages for a in planted if a in m[2])
    return "".join(lines), mentions, hub_degree, sorted(planted)


# -- scoring ------------------------------------------------------------------------

@dataclass
class ScoreReport:
    precision: float
    recall: float
    true_positives: list[str]
    false_positives: list[str]
    false_negatives: list[str]
    failed_criteria: dict[str, int]  # criterion -> number of false negatives failing it
    strain_errors: list[str]
    near_miss_misattributed: list[str]  # near misses rejected, but not by their named criterion

    def to_dict(self) -> dict:
        return asdict(self)


def score(verdicts: Iterable, manifest: Mapping) -> ScoreReport:
    """Compare verdicts against the manifest's planted positives.

    Verdicts need ``address``, ``positive``, ``strain`` and
    ``failed_criteria`` attributes (``RansomVerdict`` has them).
    """
    verdicts = list(verdicts)
    by_addr = {v.address: v for v in verdicts}
    extra = set(by_addr) - set(manifest["candidates"])
    if extra:
        raise ManifestMismatch(f"{len(extra)} verdict addresses are not manifest candidates")
    truth = {p["address"]: p for p in manifest["positives"]}
    predicted = {a for a, v in by_addr.items() if v.positive}
    tp = sorted(predicted & set(truth))
    fp = sorted(predicted - set(truth))
    fn = sorted(set(truth) - predicted)
    failed: Counter = Counter()
    for a in fn:
        if a in by_addr:  # candidates without a verdict count as negatives
            failed.update(by_addr[a].failed_criteria)
    strain_errors = []
    for a in tp:
        strain = by_addr[a].strain
        strain = getattr(strain, "value", strain)
        if strain != truth[a]["strain"]:
            strain_errors.append(a)
    misattributed = []
    for nm in manifest.get("near_misses", ()):
        v = by_addr.get(nm["address"])
        if v is not None and not v.positive and nm["violates"] not in v.failed_criteria:
            misattributed.append(nm["address"])
    precision = len(tp) / len(predicted) if predicted else 1.0
    recall = len(tp) / len(truth) if truth else 1.0
    return ScoreReport(precision, recall, tp, fp, fn, dict(sorted(failed.items())), strain_errors, misattributed)
