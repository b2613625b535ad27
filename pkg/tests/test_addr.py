import hashlib
import random
from datetime import datetime, timedelta, timezone

import base58
import bech32
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ransomflow import addr
from ransomflow.addr import Address, Encoding, ScriptKind, ValidationFailure
from ransomflow.chat import ChatMessage, Server

GENESIS = "1A1zP1eP5QGefi2DMPTfTL5SLmv7DivfNa"
P2SH = "3J98t1WpEZ73CNmQviecrnyiWrnqRhWNLy"
P2WPKH = "bc1qw508d6qejxtdg4y5r3zarvary0c5xw7kv8f3t4"
P2WSH = "bc1qrp33g0q5c5txsp9arysrx4k6zdkfs4nce4xj0gdcccefvpysxf3qccfmv3"
TAPROOT = "bc1p5d7rjq7g6rdk2yhzks9smlaqtedr4dekq08ge8ztwac72sfr9rusxg3297"


def oracle_base58(s):
    """Independent Base58Check decode: payload bytes or None."""
    try:
        raw = base58.b58decode_check(s)
    except ValueError:
        return None
    return raw if len(raw) == 21 and raw[0] in (0, 5) else None


def oracle_bech32(s):
    witver, prog = bech32.decode("bc", s)
    if witver is None or witver != 0 or len(prog) not in (20, 32):
        return None
    return bytes([witver]) + bytes(prog)


def oracle(s):
    return oracle_bech32(s) if s[:3].lower() == "bc1" else oracle_base58(s)


def msg(i, body, frm="a", to="b", server=Server.JABBER, minute=None):
    t0 = datetime(2021, 1, 1, tzinfo=timezone.utc)
    return ChatMessage(i, t0 + timedelta(minutes=i if minute is None else minute), frm, to, body, server)


@pytest.mark.parametrize("s,kind", [
    (GENESIS, ScriptKind.P2PKH),
    (P2SH, ScriptKind.P2SH),
    (P2WPKH, ScriptKind.P2WPKH),
    (P2WSH, ScriptKind.P2WSH),
])
def test_known_addresses_agree_with_oracle(s, kind):
    a = addr.validate(s)
    assert isinstance(a, Address)
    assert a.script_kind is kind
    assert a.payload == oracle(s)
    assert a.canonical == s


def test_last_char_flipped_is_checksum_failure():
    f = addr.validate(GENESIS[:-1] + "b")
    assert isinstance(f, ValidationFailure)
    assert f.rule == "checksum"
    assert not f


def test_plain_text_is_rejected():
    f = addr.validate("hello")
    assert isinstance(f, ValidationFailure)
    assert f.rule in ("charset", "length")


def test_empty_input_raises():
    with pytest.raises(ValueError):
        addr.validate("")


def test_uppercase_bech32_is_canonicalised_lower():
    a = addr.validate(P2WPKH.upper())
    assert a.canonical == P2WPKH


def test_mixed_case_bech32_rejected():
    s = P2WPKH[:10] + P2WPKH[10:].upper()
    assert addr.validate(s).rule == "charset"


def test_bech32m_is_a_version_failure():
    assert addr.validate(TAPROOT).rule == "version"


def test_wrong_base58_version_byte():
    # valid checksum, version 0x6f (testnet)
    s = base58.b58encode_check(bytes([0x6F]) + bytes(20)).decode()
    f = addr.validate(s)
    assert not f
    assert oracle_base58(s) is None


@pytest.mark.parametrize("s", [GENESIS, P2SH])
def test_every_single_char_base58_mutation_is_rejected(s):
    for i, ch in enumerate(s):
        for sub in addr.BASE58_ALPHABET:
            if sub == ch:
                continue
            mutated = s[:i] + sub + s[i + 1:]
            assert not addr.validate(mutated), mutated


@pytest.mark.parametrize("s", [P2WPKH, P2WSH])
def test_every_single_char_bech32_data_mutation_is_rejected(s):
    for i in range(4, len(s)):
        for sub in addr.BECH32_CHARSET:
            if sub == s[i]:
                continue
            assert not addr.validate(s[:i] + sub + s[i + 1:])


payloads = st.sampled_from(list(ScriptKind)).flatmap(
    lambda k: st.tuples(st.just(k), st.binary(min_size=32 if k is ScriptKind.P2WSH else 20,
                                              max_size=32 if k is ScriptKind.P2WSH else 20)))


@settings(max_examples=300, deadline=None)
@given(payloads)
def test_round_trip_is_fixed_point_and_matches_oracle(kp):
    kind, body = kp
    a = addr.make_address(kind, body)
    assert addr.encode(a.encoding, a.payload) == a.canonical
    assert addr.validate(a.canonical) == a
    assert oracle(a.canonical) == a.payload


@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=21, max_size=21))
def test_base58check_encoder_matches_oracle(payload):
    assert addr.b58check_encode(payload) == base58.b58encode_check(payload).decode()


@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=20, max_size=20))
def test_segwit_encoder_matches_oracle(program):
    assert addr.segwit_encode(0, program) == bech32.encode("bc", 0, program)


def test_random_base58_strings_with_bad_checksum_never_accepted():
    rng = random.Random(11)
    accepted = 0
    for _ in range(3000):
        s = rng.choice("13") + "".join(rng.choice(addr.BASE58_ALPHABET) for _ in range(rng.randint(25, 33)))
        result = addr.validate(s)
        assert bool(result) == (oracle_base58(s) is not None)
        accepted += bool(result)
    assert accepted == 0


# -- extraction ----------------------------------------------------------------------

def test_single_candidate_span_matches_substring_scan():
    body = f"send to {GENESIS} pls"
    [c] = addr.extract_candidates([msg(0, body)])
    raw = body.encode()
    start = raw.find(GENESIS.encode())
    assert (c.start, c.end) == (start, start + len(GENESIS)) == (8, 42)
    assert raw[c.start:c.end].decode() == c.raw_text


def test_offsets_are_utf8_bytes():
    body = f"кошелек: {P2WPKH}, спасибо"
    [c] = addr.extract_candidates([msg(0, body)])
    assert body.encode()[c.start:c.end] == P2WPKH.encode()
    assert c.start == len("кошелек: ".encode())


def test_empty_corpus():
    assert addr.extract_candidates([]) == []


def test_context_window_clips_to_conversation():
    corpus = [msg(0, "hi"), msg(1, f"pay {GENESIS}"), msg(2, "ok")]
    corpus.append(msg(3, "other", frm="c", to="d"))
    [c] = addr.extract_candidates(corpus)
    assert [m.msg_id for m in c.context] == [0, 1, 2]


def test_context_window_radius():
    corpus = [msg(i, "x" if i != 20 else P2SH, frm="a" if i % 2 else "b", to="b" if i % 2 else "a")
              for i in range(40)]
    [c] = addr.extract_candidates(corpus)
    assert [m.msg_id for m in c.context] == list(range(10, 31))


def test_tokens_inside_longer_words_are_not_candidates():
    assert addr.extract_candidates([msg(0, "x" + GENESIS + "x")]) == []


def test_dedupe_counts_mentions():
    corpus = [msg(0, GENESIS), msg(1, f"again {GENESIS}"), msg(2, f"{GENESIS} and {P2WPKH.upper()}")]
    groups = addr.dedupe(addr.extract_candidates(corpus))
    assert len(groups) == 2
    by_text = {a.canonical: len(v) for a, v in groups.items()}
    assert by_text == {GENESIS: 3, P2WPKH: 1}


def test_dedupe_drops_invalid():
    bad = GENESIS[:-1] + "b"
    assert addr.dedupe(addr.extract_candidates([msg(0, bad)])) == {}


def test_synthetic_corpus_recovers_planted(scenario):
    manifest = scenario.manifest
    corpus = scenario.corpus
    cands = addr.extract_candidates(corpus)
    groups = addr.dedupe(cands)
    planted = manifest["chat"]["planted_addresses"]
    assert {a.canonical for a in groups} == set(planted)
    assert sum(len(v) for v in groups.values()) == manifest["chat"]["mentions"]
    # junk tokens matched the grammar but none validated
    assert len(cands) > manifest["chat"]["mentions"]


def test_hash_stability_of_payload():
    a = addr.validate(GENESIS)
    assert hashlib.sha256(a.payload).hexdigest() == hashlib.sha256(oracle(GENESIS)).hexdigest()
    assert a.encoding is Encoding.BASE58CHECK
