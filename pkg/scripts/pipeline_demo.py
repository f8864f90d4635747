#!/usr/bin/env python3
"""End-to-end offline demo: filter -> annotate -> auto-review -> export -> eval.

Runs entirely against the bundled fake expert and a scripted reviewer, so it
needs no network or model. Leaves all artifacts under --workdir.

Usage:
    python scripts/pipeline_demo.py --workdir demo-run --seed 7
"""

import argparse
import json
import random
from pathlib import Path

from griffonforge import cli
from griffonforge.curation_service import CurationStore, SampleRecord, SampleState, TraceInvalid
from griffonforge.eval_harness import save_benchmark
from griffonforge.fake_expert import FakeExpertServer
from griffonforge.synthetic import planted_corpus, random_benchmark_case
from griffonforge.trace_model import BoundingBox, Boxes, VisualCue
from griffonforge.curation_filters import qa_to_obj


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="demo-run")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)

    # 1. raw corpus + filter
    records, _ = planted_corpus(
        rng, dict(yes_no=30, relation_keyword=20, attribute_keyword=10, duplicate=5, too_simple=5, no_criterion=30)
    )
    raw = work / "raw_qa.jsonl"
    with open(raw, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(qa_to_obj(record)) + "\n")
    kept = work / "kept.jsonl"
    code = cli.main(["filter", str(raw), "--out", str(kept), "--stats", str(work / "filter_stats.json")])
    assert code == 0, "filter failed"
    print(f"[1/5] filtered: {sum(1 for _ in open(kept))} kept -> {kept}")

    # 2. expert annotation against the fake endpoint
    annotated = work / "annotated.jsonl"
    with FakeExpertServer() as server:
        config = work / "expert.json"
        config.write_text(json.dumps({
            "base_url": server.base_url,
            "model_name": "fake-expert",
            "cache_dir": str(work / "expert-cache"),
            "backoff_base": 0.01,
        }))
        code = cli.main(["annotate", str(kept), "--expert-config", str(config), "--out", str(annotated)])
        assert code == 0, "annotate failed"
        print(f"[2/5] annotated with {server.calls} expert calls -> {annotated}")

    # 3. scripted human review: draw one box per pending target, then accept
    store = CurationStore(work / "curation-data")
    with open(annotated, encoding="utf-8") as handle:
        store.enqueue([SampleRecord.from_obj(json.loads(line)) for line in handle if line.strip()])
    accepted = rejected = 0
    while True:
        sample = store.next_for_review("demo-reviewer")
        if sample is None:
            break
        targets = []
        if sample.analysis:
            for entry in sample.analysis.plan:
                targets.extend(entry.targets)
        cues = [
            VisualCue(target, Boxes((BoundingBox(10 + 30 * i, 10, 40 + 30 * i, 50),)))
            for i, target in enumerate(dict.fromkeys(targets))
        ]
        if cues:
            store.submit_annotation(sample.id, "demo-reviewer", cues)
        try:
            store.decide(sample.id, "demo-reviewer", "accept")
            accepted += 1
        except TraceInvalid as exc:
            store.decide(sample.id, "demo-reviewer", "reject", notes=str(exc))
            rejected += 1
    print(f"[3/5] reviewed: {accepted} accepted, {rejected} rejected")

    # 4. export
    exported = work / "curated.jsonl"
    count = store.export_accepted(exported)
    store.close()
    print(f"[4/5] exported {count} curated samples -> {exported}")

    # 5. benchmark eval with the oracle backend
    bench = work / "benchmark.jsonl"
    save_benchmark([random_benchmark_case(rng, f"b{i}") for i in range(100)], bench)
    code = cli.main(["eval", str(bench), "--backend", "oracle", "--report", str(work / "report.json"), "--min-accuracy", "1.0"])
    assert code == 0, "eval failed"
    print(f"[5/5] eval report -> {work / 'report.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
