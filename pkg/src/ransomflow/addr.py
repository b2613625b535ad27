"""Bitcoin address extraction from chat text and Base58Check / Bech32 validation."""
from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

from .chat import ChatMessage, conversation_windows

BASE58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
BECH32_CHARSET = "qpzry9x8gf2tvdw0s3jn54khce6mua7l"
BECH32_HRP = "bc"
CONTEXT_RADIUS = 10

_B58_INDEX = {c: i for i, c in enumerate(BASE58_ALPHABET)}
_BECH32_INDEX = {c: i for i, c in enumerate(BECH32_CHARSET)}
_BECH32_GEN = (0x3B6A57B2, 0x26508E6D, 0x1EA119FA, 0x3D4233DD, 0x2A1462B3)

_TOKEN = re.compile(rb"[A-Za-z0-9]+")


class Encoding(str, enum.Enum):
    BASE58CHECK = "Base58Check"
    BECH32 = "Bech32"


class ScriptKind(str, enum.Enum):
    P2PKH = "P2PKH"
    P2SH = "P2SH"
    P2WPKH = "P2WPKH"
    P2WSH = "P2WSH"


_VERSION_KIND = {0x00: ScriptKind.P2PKH, 0x05: ScriptKind.P2SH}
_KIND_VERSION = {v: k for k, v in _VERSION_KIND.items()}


@dataclass(frozen=True)
class Address:
    """A validated mainnet Bitcoin address.

    ``payload`` is the checksummed body: version byte + hash160 for Base58Check,
    witness version byte + witness program for Bech32.
    """

    encoding: Encoding
    script_kind: ScriptKind
    canonical: str
    payload: bytes

    def __str__(self) -> str:
        return self.canonical


@dataclass(frozen=True)
class ValidationFailure:
    """Why a string is not a valid address. ``rule`` is one of
    ``charset``, ``length``, ``checksum`` or ``version``."""

    candidate: str
    rule: str
    detail: str = ""

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class CandidateAddress:
    raw_text: str
    message_id: int
    start: int  # UTF-8 byte offsets into the message body
    end: int
    context: tuple[ChatMessage, ...] = ()

    @property
    def span(self) -> tuple[int, int, int]:
        return (self.message_id, self.start, self.end)


# -- Base58Check ------------------------------------------------------------

def _sha256d(data: bytes) -> bytes:
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


def b58encode(data: bytes) -> str:
    n = int.from_bytes(data, "big")
    out = []
    while n:
        n, rem = divmod(n, 58)
        out.append(BASE58_ALPHABET[rem])
    pad = len(data) - len(data.lstrip(b"\0"))
    return "1" * pad + "".join(reversed(out))


def b58decode(text: str) -> bytes:
    n = 0
    for ch in text:
        n = n * 58 + _B58_INDEX[ch]
    body = n.to_bytes((n.bit_length() + 7) // 8, "big")
    pad = len(text) - len(text.lstrip("1"))
    return b"\0" * pad + body


def b58check_encode(payload: bytes) -> str:
    return b58encode(payload + _sha256d(payload)[:4])


# -- Bech32 (BIP-173) ---------------------------------------------------------

def _polymod(values: Iterable[int]) -> int:
    chk = 1
    for v in values:
        top = chk >> 25
        chk = ((chk & 0x1FFFFFF) << 5) ^ v
        for i, g in enumerate(_BECH32_GEN):
            if (top >> i) & 1:
                chk ^= g
    return chk


def _hrp_expand(hrp: str) -> list[int]:
    return [ord(c) >> 5 for c in hrp] + [0] + [ord(c) & 31 for c in hrp]


def _convertbits(data: Sequence[int], frombits: int, tobits: int, pad: bool) -> list[int] | None:
    acc = bits = 0
    out = []
    maxv = (1 << tobits) - 1
    for value in data:
        acc = (acc << frombits) | value
        bits += frombits
        while bits >= tobits:
            bits -= tobits
            out.append((acc >> bits) & maxv)
    if pad:
        if bits:
            out.append((acc << (tobits - bits)) & maxv)
    elif bits >= frombits or ((acc << (tobits - bits)) & maxv):
        return None
    return out


def segwit_encode(witver: int, program: bytes, hrp: str = BECH32_HRP) -> str:
    data = [witver] + _convertbits(program, 8, 5, True)
    poly = _polymod(_hrp_expand(hrp) + data + [0] * 6) ^ 1
    checksum = [(poly >> 5 * (5 - i)) & 31 for i in range(6)]
    return hrp + "1" + "".join(BECH32_CHARSET[d] for d in data + checksum)


def encode(encoding: Encoding, payload: bytes) -> str:
    if encoding is Encoding.BASE58CHECK:
        return b58check_encode(payload)
    return segwit_encode(payload[0], payload[1:])


# -- validation ---------------------------------------------------------------

def _validate_base58(s: str) -> Address | ValidationFailure:
    if any(c not in _B58_INDEX for c in s):
        return ValidationFailure(s, "charset", "character outside the Base58 alphabet")
    if not 26 <= len(s) <= 35:
        return ValidationFailure(s, "length", f"{len(s)} characters")
    raw = b58decode(s)
    if len(raw) != 25:
        return ValidationFailure(s, "length", f"decodes to {len(raw)} bytes, expected 25")
    payload, check = raw[:-4], raw[-4:]
    if _sha256d(payload)[:4] != check:
        return ValidationFailure(s, "checksum")
    kind = _VERSION_KIND.get(payload[0])
    if kind is None:
        return ValidationFailure(s, "version", f"version byte 0x{payload[0]:02x}")
    return Address(Encoding.BASE58CHECK, kind, s, payload)


def _validate_bech32(s: str) -> Address | ValidationFailure:
    if s.lower() != s and s.upper() != s:
        return ValidationFailure(s, "charset", "mixed case")
    low = s.lower()
    pos = low.rfind("1")
    if low[:pos] != BECH32_HRP:
        return ValidationFailure(s, "charset", "human-readable part is not 'bc'")
    data_part = low[pos + 1:]
    if any(c not in _BECH32_INDEX for c in data_part):
        return ValidationFailure(s, "charset", "character outside the Bech32 charset")
    if len(low) > 90 or len(data_part) < 7:
        return ValidationFailure(s, "length", f"{len(low)} characters")
    data = [_BECH32_INDEX[c] for c in data_part]
    const = _polymod(_hrp_expand(BECH32_HRP) + data)
    if const != 1:
        if const == 0x2BC830A3:
            return ValidationFailure(s, "version", "Bech32m checksum (witness v1+ unsupported)")
        return ValidationFailure(s, "checksum")
    witver = data[0]
    if witver != 0:
        return ValidationFailure(s, "version", f"witness version {witver}")
    program = _convertbits(data[1:-6], 5, 8, False)
    if program is None:
        return ValidationFailure(s, "length", "invalid padding in witness program")
    if len(program) == 20:
        kind = ScriptKind.P2WPKH
    elif len(program) == 32:
        kind = ScriptKind.P2WSH
    else:
        return ValidationFailure(s, "length", f"witness program of {len(program)} bytes")
    return Address(Encoding.BECH32, kind, low, bytes([witver]) + bytes(program))


@lru_cache(maxsize=65536)
def validate(candidate: str) -> Address | ValidationFailure:
    """Validate a candidate string; failures are returned, not raised."""
    if not candidate:
        raise ValueError("candidate must be non-empty")
    s = candidate.strip()
    if s[:3].lower() == "bc1":
        return _validate_bech32(s)
    if s[0] in "13":
        return _validate_base58(s)
    if all(c in _B58_INDEX for c in s):
        if 26 <= len(s) <= 35:
            return ValidationFailure(s, "version", "does not start with 1, 3 or bc1")
        return ValidationFailure(s, "length", f"{len(s)} characters")
    return ValidationFailure(s, "charset", "not an address")


def parse(candidate: str | Address) -> Address:
    """Like :func:`validate` but raises ``ValueError`` on failure."""
    if isinstance(candidate, Address):
        return candidate
    result = validate(candidate)
    if isinstance(result, ValidationFailure):
        raise ValueError(f"invalid address {candidate!r}: {result.rule} {result.detail}".rstrip())
    return result


def canonical(candidate: str | Address) -> str:
    return parse(candidate).canonical


def make_address(kind: ScriptKind, body: bytes) -> Address:
    """Build an address of ``kind`` from a hash160 / witness program."""
    if kind in _KIND_VERSION:
        return parse(b58check_encode(bytes([_KIND_VERSION[kind]]) + body))
    return parse(segwit_encode(0, body))


# -- extraction -----------------------------------------------------------------

def _matches_grammar(token: str) -> bool:
    if token[:3].lower() == "bc1":
        rest = token[3:].lower()
        return 14 <= len(rest) <= 74 and all(c in _BECH32_INDEX for c in rest)
    return (
        token[0] in "13"
        and 26 <= len(token) <= 35
        and all(c in _B58_INDEX for c in token)
    )


def find_tokens(body: str) -> list[tuple[str, int, int]]:
    """Address-shaped tokens in ``body`` as (text, byte_start, byte_end)."""
    raw = body.encode("utf-8")
    hits = []
    for m in _TOKEN.finditer(raw):
        token = m.group().decode("ascii")
        if _matches_grammar(token):
            hits.append((token, m.start(), m.end()))
    return hits


def extract_candidates(corpus: Sequence[ChatMessage], radius: int = CONTEXT_RADIUS) -> list[CandidateAddress]:
    """Every address-shaped token in the corpus, with its conversation window.

    Results are ordered by message (timestamp, id) and then by offset.
    """
    found = []
    for msg, window in conversation_windows(corpus, radius):
        for token, start, end in find_tokens(msg.body):
            found.append(CandidateAddress(token, msg.msg_id, start, end, window))
    return found


def dedupe(candidates: Iterable[CandidateAddress]) -> dict[Address, list[CandidateAddress]]:
    """Group valid candidates by canonical address, keeping mention order.

    Invalid candidates are dropped.
    """
    groups: dict[Address, list[CandidateAddress]] = {}
    for cand in candidates:
        result = validate(cand.raw_text)
        if isinstance(result, Address):
            groups.setdefault(result, []).append(cand)
    return groups
