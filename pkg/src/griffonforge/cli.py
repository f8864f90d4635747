"""Command-line entry point: filter -> annotate -> serve -> export -> eval.

All subcommands are pipeable: "-" means stdin/stdout for JSONL arguments,
and logs go to stderr so stdout stays clean data. Settings resolve as
flag > GRIFFONFORGE_* env var > config file (KEY=VALUE lines) > default.

Exit codes are frozen for scripting:
    0 success
    2 schema error in an input file
    3 too many expert transport failures / backend unavailable
    4 listen address already in use
    5 accuracy below --min-accuracy
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import socket
import sys
from pathlib import Path

from .curation_filters import (
    FilterOptions,
    FilterStats,
    default_lexicon,
    filter_dataset,
    load_lexicon,
    qa_from_obj,
    qa_to_obj,
)
from .curation_service import CurationStore, SampleRecord, SampleState, create_app
from .expert_client import ExpertConfig, annotate_batch
from .trace_grammar import SchemaViolation
from . import eval_harness

logger = logging.getLogger("griffonforge")

ENV_PREFIX = "GRIFFONFORGE_"

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_TRANSPORT = 3
EXIT_PORT_IN_USE = 4
EXIT_BELOW_FLOOR = 5


def load_config_file(path: str | None) -> dict[str, str]:
    """KEY=VALUE lines; blank lines and #-comments ignored."""
    if not path:
        return {}
    settings = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ValueError(f"{path}:{line_no}: expected KEY=VALUE, got {text!r}")
        key, _, value = text.partition("=")
        settings[key.strip().lower()] = value.strip()
    return settings


def setting(flag_value, name: str, config: dict[str, str], default):
    """Resolve one setting: explicit flag, then env, then config file, then default."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get(ENV_PREFIX + name.upper())
    if env is not None:
        return env
    if name.lower() in config:
        return config[name.lower()]
    return default


def _open_in(path: str):
    return sys.stdin if path == "-" else open(path, encoding="utf-8")


def _open_out(path: str):
    return sys.stdout if path == "-" else open(path, "w", encoding="utf-8")


def _dump(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def cmd_filter(args, config: dict[str, str]) -> int:
    lexicon = load_lexicon(args.lexicon) if args.lexicon else default_lexicon()
    for warning in lexicon.overlap_warnings():
        logger.warning("%s", warning)
    opts = FilterOptions(min_tokens=args.min_tokens)
    stats = FilterStats()

    def qa_stream(handle):
        for line_no, line in enumerate(handle, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"line {line_no}", f"not valid JSON: {exc}") from None
            yield qa_from_obj(obj, f"line {line_no}")

    try:
        with _open_in(args.input) as src, _open_out(args.out) as dst:
            for qa, decision in filter_dataset(qa_stream(src), lexicon, opts):
                stats.record(decision)
                if decision.keep:
                    dst.write(_dump({**qa_to_obj(qa), "decision": decision.to_obj()}) + "\n")
    except SchemaViolation as exc:
        logger.error("schema error at %s: %s", exc.path, exc.reason)
        return EXIT_SCHEMA
    if args.stats:
        Path(args.stats).write_text(stats.to_json() + "\n", encoding="utf-8")
    logger.info("filter: kept %d of %d", stats.kept, stats.total)
    return EXIT_OK


def cmd_annotate(args, config: dict[str, str]) -> int:
    expert_cfg = ExpertConfig.from_file(args.expert_config)
    try:
        with _open_in(args.input) as src:
            records = []
            for line_no, line in enumerate(src, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    logger.error("schema error at line %d: %s", line_no, exc)
                    return EXIT_SCHEMA
                records.append(qa_from_obj(obj, f"line {line_no}"))
    except SchemaViolation as exc:
        logger.error("schema error at %s: %s", exc.path, exc.reason)
        return EXIT_SCHEMA

    results = annotate_batch(records, expert_cfg)
    transport_failures = sum(1 for r in results if r.transport_failed)

    with _open_out(args.out) as dst:
        for result in results:
            sample = SampleRecord(
                id=result.qa.id,
                image=result.qa.image,
                question=result.qa.question,
                answer=result.qa.answer,
                source_dataset=result.qa.source_dataset,
                analysis=result.analysis,
                cues=list(result.cues),
                state=SampleState.AI_ANNOTATED,
                review_notes=f"expert: {result.error}" if result.error else "",
            )
            dst.write(_dump(sample.to_obj(include_lease=False)) + "\n")

    failed_fraction = transport_failures / len(results) if results else 0.0
    logger.info(
        "annotate: %d records, %d transport failures", len(results), transport_failures
    )
    if results and failed_fraction > args.max_failure_rate:
        logger.error("transport failure rate %.2f exceeds %.2f", failed_fraction, args.max_failure_rate)
        return EXIT_TRANSPORT
    return EXIT_OK


def _parse_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    return host or "127.0.0.1", int(port)


def cmd_serve(args, config: dict[str, str]) -> int:
    import uvicorn

    data_dir = setting(args.data_dir, "data_dir", config, "./curation-data")
    listen = setting(args.listen, "listen", config, "127.0.0.1:8300")
    lease_minutes = float(setting(args.lease_minutes, "lease_minutes", config, 15))
    host, port = _parse_listen(listen)

    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host, port))
    except OSError as exc:
        logger.error("cannot bind %s:%d: %s", host, port, exc)
        return EXIT_PORT_IN_USE
    finally:
        probe.close()

    store = CurationStore(data_dir, lease_seconds=lease_minutes * 60)
    if args.import_file:
        count = _import_samples(store, args.import_file)
        logger.info("imported %d samples from %s", count, args.import_file)

    app = create_app(store)
    ui_dir = setting(args.ui_dir, "ui_dir", config, None)
    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")
        logger.info("serving UI from %s at /ui", ui_dir)

    logger.info("serving on %s:%d, data in %s", host, port, data_dir)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        store.close()
        logger.info("state persisted to %s", data_dir)
    return EXIT_OK


def _import_samples(store: CurationStore, path: str) -> int:
    samples = []
    with _open_in(path) as handle:
        for line_no, line in enumerate(handle, 1):
            if not line.strip():
                continue
            samples.append(SampleRecord.from_obj(json.loads(line), f"line {line_no}"))
    inserted, warnings = store.enqueue(samples)
    for warning in warnings:
        logger.warning("%s", warning)
    return inserted


def cmd_export(args, config: dict[str, str]) -> int:
    data_dir = setting(args.data_dir, "data_dir", config, "./curation-data")
    store = CurationStore(data_dir)
    try:
        count = store.export_accepted(args.out)
    finally:
        store.close()
    logger.info("exported %d accepted samples to %s", count, args.out)
    return EXIT_OK


def cmd_eval(args, config: dict[str, str]) -> int:
    try:
        cases = eval_harness.load_benchmark(args.benchmark)
    except SchemaViolation as exc:
        logger.error("schema error at %s: %s", exc.path, exc.reason)
        return EXIT_SCHEMA

    if args.backend == "oracle":
        backend = eval_harness.OracleModel.from_cases(cases)
    elif args.backend == "mock":
        backend = eval_harness.MockModel.from_cases(
            cases, corruption_rate=args.corruption, seed=args.seed if args.seed is not None else 0
        )
    else:
        if not args.expert_config:
            logger.error("--backend http requires --expert-config")
            return EXIT_SCHEMA
        backend = eval_harness.HttpModel(ExpertConfig.from_file(args.expert_config))

    run_cfg = eval_harness.RunConfig(parallelism=args.parallelism)
    if args.mode == "unified":
        report = eval_harness.run(cases, backend, run_cfg)
    else:
        report = eval_harness.run_toolkit_baseline(
            cases, backend, tool_latency=args.tool_latency, n_tools=args.n_tools, cfg=run_cfg
        )

    print(report.render_table())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    if report.partial:
        logger.error("run aborted: backend unavailable (partial report)")
        return EXIT_TRANSPORT
    if args.min_accuracy is not None and report.accuracy < args.min_accuracy:
        logger.error("accuracy %.4f below floor %.4f", report.accuracy, args.min_accuracy)
        return EXIT_BELOW_FLOOR
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    # Global flags live on a shared parent so they work both before and
    # after the subcommand name.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="KEY=VALUE config file")
    common.add_argument("--log-level", default=None, help="logging level (default INFO)")
    common.add_argument("--seed", type=int, default=None, help="seed for all randomized behavior")

    parser = argparse.ArgumentParser(
        prog="griffonforge",
        description="Data engine and evaluation toolkit for understand-think-answer traces.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="select reasoning-oriented QA records", parents=[common])
    p.add_argument("input", help="RawQA JSONL ('-' for stdin)")
    p.add_argument("--lexicon", help="keyword lexicon file (default: bundled)")
    p.add_argument("--out", default="-", help="kept records JSONL ('-' for stdout)")
    p.add_argument("--stats", help="write filter stats JSON here")
    p.add_argument("--min-tokens", type=int, default=4, help="questions shorter than this are too simple")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("annotate", parents=[common], help="run the AI-expert analysis stage")
    p.add_argument("input", help="RawQA JSONL ('-' for stdin)")
    p.add_argument("--expert-config", required=True, help="ExpertConfig JSON file")
    p.add_argument("--out", default="-", help="annotated samples JSONL")
    p.add_argument("--max-failure-rate", type=float, default=0.5, help="abort threshold for transport failures")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("serve", parents=[common], help="run the human-review service")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--listen", default=None, help="HOST:PORT (default 127.0.0.1:8300)")
    p.add_argument("--lease-minutes", type=float, default=None)
    p.add_argument("--import", dest="import_file", default=None, help="annotated JSONL to enqueue at startup")
    p.add_argument("--ui-dir", default=None, help="serve a built review UI from this directory at /ui")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export", parents=[common], help="export accepted samples with embedded traces")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("eval", parents=[common], help="run a benchmark against a backend")
    p.add_argument("benchmark", help="EvalCase JSONL")
    p.add_argument("--backend", choices=("oracle", "mock", "http"), default="oracle")
    p.add_argument("--mode", choices=("unified", "toolkit"), default="unified")
    p.add_argument("--corruption", type=float, default=0.0, help="mock answer-corruption rate")
    p.add_argument("--n-tools", type=int, default=4, help="toolkit mode: synthetic tool calls per case")
    p.add_argument("--tool-latency", type=float, default=0.1, help="toolkit mode: seconds per tool call")
    p.add_argument("--min-accuracy", type=float, default=None, help="exit 5 when accuracy drops below this")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--expert-config", help="ExpertConfig JSON (http backend)")
    p.add_argument("--parallelism", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = load_config_file(args.config)
    level = setting(args.log_level, "log_level", config, "INFO")
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    random.seed(args.seed if args.seed is not None else 0)
    return args.func(args, config)


if __name__ == "__main__":
    sys.exit(main())
