"""Command-line entry point: ``ransomflow <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.
Every run appends a JSON record (parameters, input and output digests) to
the run log given by ``--log``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Sequence

from . import addr, chat, econ, heuristics, labels, ledger, synth, valuation

log = logging.getLogger("ransomflow")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
DEFAULT_LOG = "ransomflow-runs.jsonl"
DATA_ERRORS = (
    ledger.LedgerError, valuation.RateError, labels.LabelError, ValueError, OSError, KeyError,
    json.JSONDecodeError,
)


class UsageError(Exception):
    pass


# -- run bookkeeping -----------------------------------------------------------------

def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


class Run:
    """Collects inputs and outputs for one invocation's run record."""

    def __init__(self, command: str, params: dict, inputs: Sequence[str]):
        self.command = command
        self.params = params
        self.inputs = {str(p): file_digest(p) for p in inputs if p and Path(p).is_file()}
        self.outputs: dict[str, str] = {}
        blob = json.dumps([command, params, sorted(self.inputs.values())], sort_keys=True, default=str)
        self.run_id = hashlib.sha256(blob.encode()).hexdigest()[:16]

    def write(self, path: str | Path, text: str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.tmp")
        tmp.write_text(text, encoding="utf-8", newline="")
        os.replace(tmp, path)
        self.outputs[str(path)] = file_digest(path)
        return path

    def emit(self, out: str | None, text: str) -> None:
        if out:
            self.write(out, text)
        else:
            sys.stdout.write(text)

    def record(self, status: int) -> dict:
        return {
            "run_id": self.run_id,
            "subcommand": self.command,
            "params": self.params,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "exit_status": status,
            "timestamp": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        }


def _csv(header, rows) -> str:
    import csv
    import io
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command} needs --out DIR")
    return Path(args.out)


# -- subcommands ---------------------------------------------------------------------

def cmd_extract(args, run: Run) -> int:
    corpus = chat.load_corpus(args.corpus)
    cands = addr.extract_candidates(corpus, args.context)
    rows = []
    for c in cands:
        result = addr.validate(c.raw_text)
        ok = isinstance(result, addr.Address)
        rows.append((result.canonical if ok else c.raw_text, int(ok), "" if ok else result.rule,
                     c.message_id, c.start, c.end))
    run.emit(args.out, _csv(("address", "valid", "failure", "message_id", "start", "end"), rows))
    groups = addr.dedupe(cands)
    log.info("%d candidate mentions, %d valid mentions, %d unique valid addresses",
             len(cands), sum(len(v) for v in groups.values()), len(groups))
    return EXIT_OK


def cmd_validate(args, run: Run) -> int:
    items = list(args.addresses)
    if args.file:
        items += [line.strip() for line in Path(args.file).read_text(encoding="utf-8").splitlines() if line.strip()]
    if not items:
        raise UsageError("validate needs addresses or --file")
    rows, bad = [], 0
    for item in items:
        result = addr.validate(item)
        if isinstance(result, addr.Address):
            rows.append((item, "valid", result.encoding.value, result.script_kind.value, result.canonical))
        else:
            bad += 1
            rows.append((item, "invalid", result.rule, result.detail, ""))
    run.emit(args.out, _csv(("input", "status", "encoding_or_rule", "kind_or_detail", "canonical"), rows))
    return EXIT_DATA if bad else EXIT_OK


def cmd_ingest(args, run: Run) -> int:
    g = ledger.load_graph(args.txs)
    if args.out:
        tmp = Path(args.out).with_name(f".{Path(args.out).name}.ingest")
        ledger.dump_transactions(g.transactions.values(), tmp)
        run.write(args.out, tmp.read_text(encoding="utf-8"))
        tmp.unlink()
    log.info("ingested %d transactions touching %d addresses", len(g), len(g.addresses()))
    return EXIT_OK


def cmd_fetch(args, run: Run) -> int:
    config = ledger.ClientConfig(args.endpoint, Path(args.cache), args.rate)
    targets = labels.read_address_list(args.addr_file)
    txs = {}
    with ledger.FetchClient(config) as client:
        for a in targets:
            for tx in client.fetch_address_history(a):
                txs[tx.txid] = tx
    if args.out:
        tmp = Path(args.out).with_name(f".{Path(args.out).name}.fetch")
        ledger.dump_transactions(txs.values(), tmp)
        run.write(args.out, tmp.read_text(encoding="utf-8"))
        tmp.unlink()
    log.info("fetched %d addresses, %d transactions", len(targets), len(txs))
    return EXIT_OK


def _entities(args) -> labels.EntityStore:
    if not args.entities:
        return labels.EntityStore()
    return labels.load_entities(args.entities, args.clusters)


def _params(args) -> heuristics.Params:
    cutoff = chat.parse_ts(args.cutoff if "T" in args.cutoff else args.cutoff + "T00:00:00Z")
    return heuristics.Params(Decimal(args.tol_pp), args.max_hops, Decimal(args.threshold), cutoff, args.taint_depth)


def cmd_detect(args, run: Run) -> int:
    g = ledger.load_graph(args.txs)
    entities = _entities(args)
    leak = set(labels.read_address_list(args.leak_addrs))
    if args.candidates:
        candidates = labels.read_address_list(args.candidates)
    else:
        candidates = [a for a in g.addresses() if a not in leak and entities.entity_of(a) is None]
    verdicts = heuristics.classify_all(candidates, leak, g, entities, _params(args))
    header = heuristics.VERDICT_FIELDS
    run.emit(args.out, _csv(header, heuristics.verdict_rows(verdicts)))
    if args.derived_labels:
        derived = [
            labels.LabelRecord(v.address, labels.Category.RANSOM_PAYMENT, "",
                               f"likely {v.strain.value}; split {v.split.matched_percent}%",
                               labels.Source.DERIVED, run.run_id)
            for v in verdicts if v.positive
        ]
        run.write(args.derived_labels, labels.LabelStore(derived).dumps())
    log.info("%d of %d candidates positive", sum(v.positive for v in verdicts), len(verdicts))
    return EXIT_OK


def cmd_cluster(args, run: Run) -> int:
    g = ledger.load_graph(args.txs)
    clusters = heuristics.cospend_clusters(g)
    members = clusters.member_of if args.all else {
        a: rep for rep, ms in clusters.nontrivial().items() for a in ms}
    run.emit(args.out, _csv(("address", "cluster"), sorted(members.items())))
    log.info("%d addresses in %d clusters", len(clusters.member_of), len(clusters.clusters))
    return EXIT_OK


def cmd_report(args, run: Run) -> int:
    g = ledger.load_graph(args.txs)
    rates = valuation.load_rates(args.rates, args.gap_policy)
    store = labels.load_labels(args.labels) if args.labels else labels.LabelStore()
    if args.derived_labels:
        store = store.merged(labels.load_labels(args.derived_labels).records)
    verdicts = heuristics.read_verdicts(args.verdicts) if args.verdicts else []
    entities = _entities(args)
    out = _out_dir(args)
    kind = args.kind
    if args.format == "graph-text" and kind != "flows":
        raise UsageError("--format graph-text is only available for flows")
    if kind == "summary":
        run.write(out / "summary.csv", econ.summary_csv(econ.summarize(store, verdicts, g, rates)))
    elif kind == "origins":
        confirmed = store.addresses(labels.Category.RANSOM_PAYMENT)
        confirmed = [a for a in confirmed if not any(
            r.source is labels.Source.DERIVED for r in store.for_address(a))]
        rows = econ.origin_table(verdicts, confirmed, g, entities, rates)
        run.write(out / "origins.csv", econ.origins_csv(rows))
    elif kind == "aliases":
        run.write(out / "aliases.csv", econ.aliases_csv(econ.alias_earnings(store, g, rates)))
    else:
        report = econ.flow_report(store, g, entities, rates)
        if args.format == "graph-text":
            run.write(out / "flows.dot", econ.flows_dot(report))
        else:
            run.write(out / "flows.csv", econ.flows_csv(report))
    return EXIT_OK


def cmd_chat(args, run: Run) -> int:
    if args.action == "rank":
        corpus = chat.load_corpus(args.corpus)
        rows = [(server.value, i + 1, alias, degree)
                for server, ranked in chat.centrality_by_server(corpus, args.top).items()
                for i, (alias, degree) in enumerate(ranked)]
        run.emit(args.out, _csv(("server", "rank", "alias", "degree"), rows))
    elif args.action == "kappa":
        sheets = [chat.read_worksheet(p) for p in args.worksheets]
        matrix = chat.AgreementMatrix.from_worksheets(sheets)
        kappa = chat.fleiss_kappa(matrix)
        run.emit(args.out, _csv(("items", "raters", "categories", "fleiss_kappa"),
                                [(len(matrix.items), matrix.raters, len(matrix.categories), f"{kappa:.6f}")]))
    else:
        corpus = chat.load_corpus(args.corpus)
        cands = addr.extract_candidates(corpus)
        if args.valid_only:
            cands = [c for c in cands if isinstance(addr.validate(c.raw_text), addr.Address)]
        seed = 0 if args.seed is None else args.seed
        rows = chat.sample_for_annotation(cands, args.n, seed)
        if not args.out:
            raise UsageError("chat sample needs --out FILE")
        tmp = Path(args.out).with_name(f".{Path(args.out).name}.sheet")
        chat.write_worksheet(rows, tmp)
        run.write(args.out, tmp.read_text(encoding="utf-8"))
        tmp.unlink()
    return EXIT_OK


def cmd_synth(args, run: Run) -> int:
    if args.action == "generate":
        cfg = synth.load_config(args.config) if args.config else synth.ScenarioConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        scenario = synth.generate(cfg)
        out = _out_dir(args)
        for name, text in sorted(scenario.files.items()):
            run.write(out / name, text)
        return EXIT_OK
    verdicts = heuristics.read_verdicts(args.verdicts)
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    report = synth.score(verdicts, manifest)
    run.emit(args.out, json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; SUPPRESS keeps them from clobbering
    # values given before the subcommand name
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(None), help="seed for sampling and synthesis")
    p.add_argument("--out", default=d(None), help="output file or directory")
    p.add_argument("--log", default=d(None), help=f"run log (default ./{DEFAULT_LOG})")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="ransomflow", description=__doc__.splitlines()[0],
                                     parents=[_global_flags(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common], help="find address candidates in a chat corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--context", type=int, default=addr.CONTEXT_RADIUS)
    p.set_defaults(func=cmd_extract, inputs=["corpus"])

    p = sub.add_parser("validate", parents=[common], help="check Base58Check/Bech32 addresses")
    p.add_argument("addresses", nargs="*")
    p.add_argument("--file")
    p.set_defaults(func=cmd_validate, inputs=["file"])

    p = sub.add_parser("ingest", parents=[common], help="validate and merge transaction files")
    p.add_argument("--txs", nargs="+", required=True)
    p.set_defaults(func=cmd_ingest, inputs=["txs"])

    p = sub.add_parser("fetch", parents=[common], help="download address histories into a cache")
    p.add_argument("--addr-file", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--endpoint", required=True)
    p.add_argument("--rate", type=float, default=1.0, help="requests per second")
    p.set_defaults(func=cmd_fetch, inputs=["addr_file"])

    def graph_inputs(p, entities_required=False):
        p.add_argument("--txs", nargs="+", required=True)
        p.add_argument("--entities", required=entities_required)
        p.add_argument("--clusters", help="address,cluster membership file")

    p = sub.add_parser("detect", parents=[common], help="classify likely ransom payment addresses")
    graph_inputs(p, entities_required=True)
    p.add_argument("--leak-addrs", required=True)
    p.add_argument("--candidates", help="addresses to classify (default: every unlabeled address)")
    p.add_argument("--tol-pp", default="0.5")
    p.add_argument("--max-hops", type=int, default=8)
    p.add_argument("--threshold", default="0.99")
    p.add_argument("--cutoff", default="2020-03-01")
    p.add_argument("--taint-depth", type=int, default=0, help="extra haircut-taint hops for source attribution")
    p.add_argument("--derived-labels", help="also write positive verdicts as derived labels")
    p.set_defaults(func=cmd_detect, inputs=["txs", "entities", "clusters", "leak_addrs", "candidates"])

    p = sub.add_parser("cluster", parents=[common], help="co-spend clusters")
    p.add_argument("--txs", nargs="+", required=True)
    p.add_argument("--all", action="store_true", help="include singleton clusters")
    p.set_defaults(func=cmd_cluster, inputs=["txs"])

    p = sub.add_parser("report", parents=[common], help="economic reports")
    p.add_argument("kind", choices=("summary", "origins", "aliases", "flows"))
    graph_inputs(p)
    p.add_argument("--labels")
    p.add_argument("--derived-labels")
    p.add_argument("--verdicts")
    p.add_argument("--rates", required=True)
    p.add_argument("--gap-policy", choices=(valuation.STRICT, valuation.CARRY), default=valuation.STRICT)
    p.add_argument("--format", choices=("csv", "graph-text"), default="csv")
    p.set_defaults(func=cmd_report, inputs=["txs", "entities", "clusters", "labels", "derived_labels",
                                            "verdicts", "rates"])

    p = sub.add_parser("chat", parents=[common], help="chat corpus analytics")
    chat_sub = p.add_subparsers(dest="action", required=True)
    q = chat_sub.add_parser("rank", parents=[common], help="aliases by degree centrality")
    q.add_argument("--corpus", required=True)
    q.add_argument("--top", type=int, default=50)
    q.set_defaults(inputs=["corpus"])
    q = chat_sub.add_parser("kappa", parents=[common], help="Fleiss' kappa over rater worksheets")
    q.add_argument("--worksheets", nargs="+", required=True)
    q.set_defaults(inputs=["worksheets"])
    q = chat_sub.add_parser("sample", parents=[common], help="draw an annotation worksheet")
    q.add_argument("--corpus", required=True)
    q.add_argument("--n", type=int, required=True)
    q.add_argument("--valid-only", action="store_true")
    q.set_defaults(inputs=["corpus"])
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("synth", parents=[common], help="synthetic scenarios")
    synth_sub = p.add_subparsers(dest="action", required=True)
    q = synth_sub.add_parser("generate", parents=[common])
    q.add_argument("--config")
    q.set_defaults(inputs=["config"])
    q = synth_sub.add_parser("score", parents=[common])
    q.add_argument("--verdicts", required=True)
    q.add_argument("--manifest", required=True)
    q.set_defaults(inputs=["verdicts", "manifest"])
    p.set_defaults(func=cmd_synth)
    return parser


def _input_paths(args) -> list[str]:
    paths = []
    for name in getattr(args, "inputs", []):
        value = getattr(args, name, None)
        if isinstance(value, (list, tuple)):
            paths += list(value)
        elif value:
            paths.append(value)
    return paths


def _params_snapshot(args) -> dict:
    skip = {"func", "inputs", "log", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    command = " ".join(filter(None, [args.command, getattr(args, "action", None),
                                     getattr(args, "kind", None)]))
    run = None
    try:
        run = Run(command, _params_snapshot(args), _input_paths(args))
        status = args.func(args, run)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _report_error("UsageError", exc)
        status = EXIT_USAGE
    except DATA_ERRORS as exc:
        _report_error(type(exc).__name__, exc)
        status = EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        _report_error("InternalError", exc)
        status = EXIT_INTERNAL
    if run is not None:
        _append_log(args.log or DEFAULT_LOG, run.record(status))
    return status


def _report_error(kind: str, exc: BaseException) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc)}) + "\n")


def _append_log(path: str, record: dict) -> None:
    try:
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True, default=str) + "\n")
    except OSError as exc:
        log.warning("could not append run record to %s: %s", path, exc)


if __name__ == "__main__":
    sys.exit(main())
