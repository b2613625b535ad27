from __future__ import annotations

import hashlib
from pathlib import Path

import pytest

from ransomflow.addr import ScriptKind, make_address
from ransomflow.labels import EntityKind, EntityRecord, EntityStore, Risk
from ransomflow.ledger import ingest

FIXTURES = Path(__file__).resolve().parent / "fixtures"

# criterion number -> (ok, detail); filled by test_acceptance, printed at the end
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")


def addr_of(label: str, kind: ScriptKind = ScriptKind.P2PKH) -> str:
    size = 32 if kind is ScriptKind.P2WSH else 20
    return make_address(kind, hashlib.sha256(label.encode()).digest()[:size]).canonical


def txid_of(label: str) -> str:
    return hashlib.sha256(label.encode()).hexdigest()


def mk_tx(label: str, time: int, inputs, outputs, fee: int | None = None) -> dict:
    """Transaction record from ``[(address, sats), ...]`` lists; fee defaults to the difference."""
    if fee is None:
        fee = sum(v for _, v in inputs) - sum(v for _, v in outputs) if inputs else 0
    return {
        "txid": txid_of(label),
        "time": time,
        "inputs": [{"addr": a, "value_sats": v} for a, v in inputs],
        "outputs": [{"addr": a, "value_sats": v} for a, v in outputs],
        "fee_sats": fee,
    }


def graph(*records):
    return ingest(records)


def exchange(address: str, name: str, risk: Risk = Risk.LOW) -> EntityRecord:
    return EntityRecord(address, name, EntityKind.EXCHANGE, risk)


@pytest.fixture
def A():
    """Address factory: ``A('x')`` gives a stable valid address for label x."""
    return addr_of


@pytest.fixture
def empty_entities():
    return EntityStore()


class LoadedScenario:
    """A generated scenario written to disk and loaded back through the public readers."""

    def __init__(self, root: Path, scenario):
        from ransomflow import chat, labels, ledger, valuation

        self.root = root
        self.scenario = scenario
        self.manifest = scenario.manifest
        self.graph = ledger.load_graph([root / "transactions.jsonl"])
        self.entities = labels.load_entities(root / "entities.csv", root / "clusters.csv")
        self.labels = labels.load_labels(root / "labels.csv")
        self.rates = valuation.load_rates(root / "rates.csv")
        self.leak = labels.read_address_list(root / "leak_addresses.txt")
        self.candidates = labels.read_address_list(root / "candidates.txt")
        self.corpus = chat.load_corpus(root / "corpus.jsonl")

    def path(self, name: str) -> Path:
        return self.root / name


@pytest.fixture(scope="session")
def scenario(tmp_path_factory):
    from ransomflow import synth

    root = tmp_path_factory.mktemp("scenario")
    generated = synth.generate(synth.ScenarioConfig(seed=0))
    generated.write(root)
    return LoadedScenario(root, generated)


@pytest.fixture(scope="session")
def scenario_verdicts(scenario):
    from ransomflow.heuristics import classify_all

    return classify_all(scenario.candidates, scenario.leak, scenario.graph, scenario.entities)
