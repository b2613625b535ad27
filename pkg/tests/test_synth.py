import math
from collections import Counter
from decimal import Decimal

import pytest

from ransomflow import heuristics as h
from ransomflow import synth
from ransomflow.heuristics import Params, RansomVerdict
from ransomflow.ledger import ingest, read_transactions
from ransomflow.synth import InvalidConfig, ManifestMismatch, ScenarioConfig


def test_same_seed_is_byte_identical():
    a = synth.generate(ScenarioConfig(seed=5, background=50, chat_messages=200))
    b = synth.generate(ScenarioConfig(seed=5, background=50, chat_messages=200))
    assert a.files == b.files
    c = synth.generate(ScenarioConfig(seed=6, background=50, chat_messages=200))
    assert c.files["transactions.jsonl"] != a.files["transactions.jsonl"]


def test_written_files_match(tmp_path):
    sc = synth.generate(ScenarioConfig(seed=1, background=20, chat_messages=100))
    sc.write(tmp_path)
    for name, text in sc.files.items():
        assert (tmp_path / name).read_text(encoding="utf-8") == text


def test_zero_victims_is_a_valid_empty_economy(tmp_path):
    sc = synth.generate(ScenarioConfig(victims=0, near_misses_per_kind=0))
    sc.write(tmp_path)
    g = ingest(read_transactions(tmp_path / "transactions.jsonl"))
    assert sc.manifest["positives"] == []
    assert len(g) > 0
    report = synth.score([], sc.manifest)
    assert (report.precision, report.recall) == (1.0, 1.0)


def test_generated_transactions_pass_ingest_checks(scenario):
    for tx in scenario.graph.iter_transactions():
        tx.check()
    assert len(scenario.manifest["candidates"]) == 1000
    assert len(scenario.manifest["positives"]) == 100


def test_split_histogram_matches_configured_distribution():
    cfg = ScenarioConfig(seed=3, chat_messages=0, background=0, near_misses_per_kind=0)
    sc = synth.generate(cfg)
    hist = Counter({int(k): v for k, v in sc.manifest["split_percent_histogram"].items()})
    assert sum(hist.values()) == cfg.victims
    assert Counter(int(p["percent"]) for p in sc.manifest["positives"]) == hist
    n = cfg.victims
    for pct, prob in cfg.split_percent_weights.items():
        expected = n * float(prob)
        sd = math.sqrt(n * float(prob) * (1 - float(prob)))
        assert abs(hist[pct] - expected) <= 4 * sd + 1, pct
    assert hist.most_common(1)[0][0] == 20


def test_near_misses_violate_exactly_one_criterion(scenario, scenario_verdicts):
    by_addr = {v.address: v for v in scenario_verdicts}
    kinds = Counter()
    for nm in scenario.manifest["near_misses"]:
        assert by_addr[nm["address"]].failed_criteria == (nm["violates"],)
        kinds[nm["violates"]] += 1
    assert set(kinds) == set(synth.NEAR_MISS_KINDS)


def test_background_never_reaches_leak(scenario, scenario_verdicts):
    planted = {p["address"] for p in scenario.manifest["positives"]}
    planted |= {n["address"] for n in scenario.manifest["near_misses"]}
    for v in scenario_verdicts:
        if v.address not in planted:
            assert not v.reaches_leak


def test_era_boundary_plants(scenario):
    cutoff = int(h.ERA_CUTOFF.timestamp())
    near = [p for p in scenario.manifest["positives"] if abs(p["first_seen"] - cutoff) < 3 * 86400]
    assert {p["strain"] for p in near} == {"Ryuk", "Conti"}


def test_perfect_detector_scores_one(scenario):
    truth = {p["address"] for p in scenario.manifest["positives"]}
    strain = {p["address"]: p["strain"] for p in scenario.manifest["positives"]}
    verdicts = [RansomVerdict(a, a in truth, a in truth, a in truth, h.Strain(strain[a]) if a in truth else None)
                for a in scenario.manifest["candidates"]]
    report = synth.score(verdicts, scenario.manifest)
    assert (report.precision, report.recall) == (1.0, 1.0)
    assert report.strain_errors == []


def test_empty_verdicts_give_zero_recall(scenario):
    report = synth.score([], scenario.manifest)
    assert report.recall == 0.0
    assert len(report.false_negatives) == 100


def test_unknown_verdict_address_rejected(scenario):
    with pytest.raises(ManifestMismatch):
        synth.score([RansomVerdict("1A1zP1eP5QGefi2DMPTfTL5SLmv7DivfNa", True, True, True)], scenario.manifest)


def test_zero_tolerance_drops_recall_on_split(scenario, scenario_verdicts):
    default = synth.score(scenario_verdicts, scenario.manifest)
    strict = h.classify_all(scenario.candidates, scenario.leak, scenario.graph, scenario.entities,
                            Params(tol_pp=Decimal(0)))
    report = synth.score(strict, scenario.manifest)
    assert report.recall < default.recall
    assert set(report.failed_criteria) == {"split_ok"}


def test_config_from_yaml(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text("seed: 9\nvictims: 10\nsplit_percent_weights: {20: 3, 35: 1}\n")
    cfg = synth.load_config(p)
    assert cfg.seed == 9 and cfg.victims == 10
    assert sum(cfg.split_percent_weights.values()) == 1


@pytest.mark.parametrize("text", [
    "victimz: 3\n",
    "split_percent_weights: {7: 1}\n",
    "victims: -1\n",
    "fee_sat_per_vbyte: [0, 5]\n",
    "- 1\n- 2\n",
])
def test_bad_config(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    with pytest.raises(InvalidConfig):
        synth.load_config(p)
