"""Command-line entry point: ``semstream <subcommand> [options]``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional, Sequence

from .apps.omop import export_omop
from .clock import DEFAULT_EPOCH, format_timestamp, parse_timestamp
from .config import ConfigInvalid, PipelineConfig, load_config
from .encoder.decoders import DECODE_ERRORS, decode_payload
from .encoder.graphs import encode_record
from .pipeline import run_pipeline
from .query import evaluate
from .rdf.turtle import format_term, serialize_turtle
from .simgen import feed_events
from .store import TripleStore, load_journal

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

FORMATS = {"hl7v2": "HL7V2", "fhirjson": "FHIRJSON", "pipe": "PIPE"}


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config (TOML path, or a shipped example such as hypertension.example)")
    p.add_argument("--seed", type=int, help="override scenario seed")
    p.add_argument("--scenario", choices=["normal", "hypertension", "hypothermia"], help="override scenario condition")
    p.add_argument("--duration", help="override scenario duration in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semstream", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario through the whole pipeline and print the run report")
    _add_scenario_flags(run)
    run.add_argument("--clock", choices=["virtual", "wall"], help="override clock mode")
    run.add_argument("--journal", help="append stored graphs to this Turtle journal")

    sim = sub.add_parser("simulate", help="print the simulated feed without running the pipeline")
    _add_scenario_flags(sim)

    conv = sub.add_parser("convert", help="convert one message on stdin to Turtle on stdout")
    conv.add_argument("--format", required=True, choices=sorted(FORMATS), help="input message format")
    conv.add_argument("--at", help="ingest timestamp to stamp on the graphs (default 2024-01-01T00:00:00Z)")

    q = sub.add_parser("query", help="evaluate the configured queries once against a journal")
    q.add_argument("--config", required=True, help="config holding [[query]] tables")
    q.add_argument("--journal", required=True, help="journal written by 'run --journal'")
    q.add_argument("--name", help="only this query")

    exp = sub.add_parser("export-omop", help="write PERSON, VISIT_OCCURRENCE and MEASUREMENT CSVs")
    exp.add_argument("--journal", required=True)
    exp.add_argument("--out", default=".", help="output directory")

    dump = sub.add_parser("dump", help="print a journal's current graphs as Turtle")
    dump.add_argument("--journal", required=True)
    return parser


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(
        seed=args.seed, condition=args.scenario, duration=args.duration,
        clock=getattr(args, "clock", None), journal=getattr(args, "journal", None),
    )


def _journal(path: str) -> TripleStore:
    if not Path(path).exists():
        raise ConfigInvalid("--journal", f"{path} does not exist")
    return load_journal(path)


def cmd_run(args, out) -> int:
    report = run_pipeline(_config(args))
    out.write(report.to_json() + "\n")
    return EXIT_OK if not report.errors else EXIT_RUNTIME


def cmd_simulate(args, out) -> int:
    cfg = _config(args)
    for event in feed_events(cfg.scenario):
        out.write(f"# {format_timestamp(event.at)} {event.topic}\n")
        body = event.payload.replace("\r", "\n")
        out.write(body if body.endswith("\n") else body + "\n")
    return EXIT_OK


def cmd_convert(args, out, stdin) -> int:
    at: datetime = parse_timestamp(args.at) if args.at else DEFAULT_EPOCH
    text = stdin.read()
    try:
        records = decode_payload(FORMATS[args.format], text)
    except DECODE_ERRORS as exc:
        sys.stderr.write(f"semstream: cannot decode input: {exc}\n")
        return EXIT_RUNTIME
    triples = set()
    for rec in records:
        triples |= encode_record(rec, at).triples
    out.write(serialize_turtle(triples))
    return EXIT_OK


def cmd_query(args, out) -> int:
    cfg = load_config(args.config)
    queries = [q for q in cfg.queries if args.name in (None, q.name)]
    if not queries:
        raise ConfigInvalid("--name" if args.name else "query", "no matching query")
    snapshot = _journal(args.journal).snapshot()
    for q in queries:
        result = evaluate(q, snapshot)
        out.write(f"# {q.name}: {len(result)} rows\n")
        out.write("\t".join(f"?{c}" for c in result.columns) + "\n")
        for row in result.rows:
            out.write("\t".join(format_term(t) for t in row) + "\n")
    return EXIT_OK


def cmd_export(args, out) -> int:
    export = export_omop(_journal(args.journal))
    for path in export.write(args.out):
        out.write(f"{path}\n")
    counts = export.counts()
    out.write(" ".join(f"{t}={n}" for t, n in counts.items()) + f" unmapped={export.unmapped}\n")
    return EXIT_OK


def cmd_dump(args, out) -> int:
    out.write(_journal(args.journal).dump())
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None, out=None, stdin=None) -> int:
    out = out or sys.stdout
    stdin = stdin or sys.stdin
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; bad flags are configuration errors here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args, out)
        if args.command == "simulate":
            return cmd_simulate(args, out)
        if args.command == "convert":
            return cmd_convert(args, out, stdin)
        if args.command == "query":
            return cmd_query(args, out)
        if args.command == "export-omop":
            return cmd_export(args, out)
        return cmd_dump(args, out)
    except ConfigInvalid as exc:
        sys.stderr.write(f"semstream: invalid configuration: {exc}\n")
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        sys.stderr.write(f"semstream: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
