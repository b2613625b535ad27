"""Chat corpus loading, alias centrality, annotation sampling and Fleiss' kappa."""
from __future__ import annotations

import csv
import enum
import json
import random
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Iterator, Sequence

import numpy as np

if TYPE_CHECKING:
    from .addr import CandidateAddress


class Server(str, enum.Enum):
    JABBER = "Jabber"
    ROCKETCHAT = "RocketChat"

    @classmethod
    def parse(cls, value: str | None) -> "Server":
        if not value:
            return cls.JABBER
        key = value.replace(".", "").replace("-", "").lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown chat server {value!r}")


@dataclass(frozen=True)
class ChatMessage:
    msg_id: int
    ts: datetime
    from_alias: str
    to_alias: str
    body: str
    server: Server = Server.JABBER

    def __post_init__(self):
        if not self.from_alias or not self.to_alias:
            raise ValueError(f"message {self.msg_id}: aliases must be non-empty")

    @property
    def conversation(self) -> tuple[Server, frozenset[str]]:
        return (self.server, frozenset((self.from_alias, self.to_alias)))

    def render(self) -> str:
        return f"[{self.ts.strftime('%Y-%m-%dT%H:%M:%SZ')}] {self.from_alias}->{self.to_alias}: {self.body}"


class DegenerateAgreement(ValueError):
    pass


class SampleTooLarge(ValueError):
    pass


def parse_ts(value: str) -> datetime:
    ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def load_corpus(path: str | Path) -> list[ChatMessage]:
    """Read a JSON-lines chat log (``ts``, ``from``, ``to``, ``body``, optional
    ``server`` and ``id``). Messages without an id are numbered by line."""
    messages = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                messages.append(ChatMessage(
                    msg_id=int(rec.get("id", lineno)),
                    ts=parse_ts(rec["ts"]),
                    from_alias=str(rec["from"]),
                    to_alias=str(rec["to"]),
                    body=str(rec["body"]),
                    server=Server.parse(rec.get("server")),
                ))
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno + 1}: missing field {exc}") from None
    return sort_corpus(messages)


def dump_corpus(messages: Iterable[ChatMessage], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for m in messages:
            rec = {"id": m.msg_id, "ts": m.ts.strftime("%Y-%m-%dT%H:%M:%SZ"), "from": m.from_alias,
                   "to": m.to_alias, "body": m.body, "server": m.server.value}
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def sort_corpus(messages: Iterable[ChatMessage]) -> list[ChatMessage]:
    return sorted(messages, key=lambda m: (m.ts, m.msg_id))


def conversation_windows(
    corpus: Sequence[ChatMessage], radius: int = 10
) -> Iterator[tuple[ChatMessage, tuple[ChatMessage, ...]]]:
    """Yield each message with up to ``radius`` messages either side of it in
    the same conversation, in corpus order."""
    threads: dict[tuple, list[ChatMessage]] = defaultdict(list)
    for m in sort_corpus(corpus):
        threads[m.conversation].append(m)
    position = {}
    for thread in threads.values():
        for i, m in enumerate(thread):
            position[(m.conversation, m.msg_id, m.ts)] = i
    for m in sort_corpus(corpus):
        thread = threads[m.conversation]
        i = position[(m.conversation, m.msg_id, m.ts)]
        yield m, tuple(thread[max(0, i - radius): i + radius + 1])


# -- centrality ---------------------------------------------------------------

def degree_centrality(corpus: Iterable[ChatMessage], top: int | None = None) -> list[tuple[str, int]]:
    """Aliases ranked by messages sent plus received (ties by alias).

    The corpus must come from a single server; use :func:`centrality_by_server`
    for mixed logs.
    """
    degree: Counter[str] = Counter()
    servers = set()
    for m in corpus:
        servers.add(m.server)
        degree[m.from_alias] += 1
        degree[m.to_alias] += 1
    if len(servers) > 1:
        raise ValueError("corpus mixes chat servers; rank each server separately")
    ranked = sorted(degree.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked if top is None else ranked[:top]


def centrality_by_server(corpus: Iterable[ChatMessage], top: int | None = None) -> dict[Server, list[tuple[str, int]]]:
    split: dict[Server, list[ChatMessage]] = defaultdict(list)
    for m in corpus:
        split[m.server].append(m)
    return {server: degree_centrality(msgs, top) for server, msgs in sorted(split.items())}


# -- annotation ----------------------------------------------------------------

def candidate_id(cand: "CandidateAddress") -> str:
    return f"{cand.message_id}:{cand.start}"


def sample_for_annotation(candidates: Sequence["CandidateAddress"], n: int, seed: int) -> list[dict[str, str]]:
    """Draw a seeded random worksheet of ``n`` candidates with blank categories."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n > len(candidates):
        raise SampleTooLarge(f"asked for {n} of {len(candidates)} candidates")
    picked = random.Random(seed).sample(list(candidates), n)
    return [
        {
            "candidate_id": candidate_id(c),
            "address": c.raw_text,
            "context": "\n".join(m.render() for m in c.context),
            "category": "",
        }
        for c in picked
    ]


WORKSHEET_FIELDS = ("candidate_id", "address", "context", "category")


def write_worksheet(rows: Iterable[dict[str, str]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=WORKSHEET_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_worksheet(path: str | Path) -> dict[str, str]:
    """Map candidate id to the rater's category."""
    with open(path, encoding="utf-8", newline="") as fh:
        return {row["candidate_id"]: row["category"].strip() for row in csv.DictReader(fh)}


@dataclass(frozen=True)
class AgreementMatrix:
    """Rating counts, one row per item and one column per category."""

    counts: np.ndarray
    categories: tuple[str, ...] = ()
    items: tuple[str, ...] = ()

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValueError("agreement matrix must be 2-dimensional")
        if counts.size and (counts < 0).any():
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def raters(self) -> int:
        sums = set(self.counts.sum(axis=1).tolist())
        if len(sums) != 1:
            raise ValueError("every item must be rated by the same number of raters")
        return int(sums.pop())

    @classmethod
    def from_worksheets(cls, sheets: Sequence[dict[str, str]]) -> "AgreementMatrix":
        items = sorted(set().union(*sheets)) if sheets else []
        for i, sheet in enumerate(sheets):
            missing = set(items) - set(sheet)
            if missing:
                raise ValueError(f"worksheet {i} lacks items {sorted(missing)[:5]}")
            blank = [k for k, v in sheet.items() if not v]
            if blank:
                raise ValueError(f"worksheet {i} has unrated items {blank[:5]}")
        categories = sorted({sheet[item] for sheet in sheets for item in items})
        col = {c: j for j, c in enumerate(categories)}
        counts = np.zeros((len(items), len(categories)), dtype=np.int64)
        for r, item in enumerate(items):
            for sheet in sheets:
                counts[r, col[sheet[item]]] += 1
        return cls(counts, tuple(categories), tuple(items))


def fleiss_kappa(m: AgreementMatrix | np.ndarray) -> float:
    """Fleiss' kappa, (P_bar - P_e) / (1 - P_e)."""
    counts = m.counts if isinstance(m, AgreementMatrix) else AgreementMatrix(m).counts
    if counts.shape[0] == 0:
        raise ValueError("no items to score")
    n = AgreementMatrix(counts).raters
    if n < 2:
        raise ValueError("need at least two raters per item")
    counts = counts.astype(np.float64)
    p_item = ((counts * counts).sum(axis=1) - n) / (n * (n - 1))
    p_bar = p_item.mean()
    p_cat = counts.sum(axis=0) / counts.sum()
    p_e = float((p_cat * p_cat).sum())
    if p_e == 1.0:
        if p_bar == 1.0:
            return 1.0
        raise DegenerateAgreement("expected agreement is 1")
    return float((p_bar - p_e) / (1.0 - p_e))
