#!/usr/bin/env python3
"""Generate seeded demo inputs: a raw QA corpus, scene graphs, a benchmark.

Usage:
    python scripts/make_demo_data.py --out demo-data --seed 7 --corpus 500 --bench 200
"""

import argparse
import json
import random
from pathlib import Path

from griffonforge.curation_filters import qa_to_obj
from griffonforge.eval_harness import save_benchmark
from griffonforge.geometric_reasoner import save_scenes
from griffonforge.synthetic import planted_corpus, random_benchmark_case, random_scene


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo-data")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--corpus", type=int, default=500, help="raw QA records")
    parser.add_argument("--bench", type=int, default=200, help="benchmark cases")
    parser.add_argument("--scenes", type=int, default=50, help="standalone scene graphs")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)

    share = max(args.corpus // 10, 1)
    plan = dict(
        yes_no=3 * share,
        relation_keyword=2 * share,
        attribute_keyword=share,
        duplicate=share,
        too_simple=share,
        no_criterion=args.corpus - 8 * share,
    )
    records, expected = planted_corpus(rng, plan)
    with open(out / "raw_qa.jsonl", "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(qa_to_obj(record), ensure_ascii=False) + "\n")
    (out / "raw_qa.expected.json").write_text(json.dumps(expected, indent=2) + "\n")

    cases = [random_benchmark_case(rng, f"bench-{i}") for i in range(args.bench)]
    save_benchmark(cases, out / "benchmark.jsonl")

    scenes = [random_scene(rng, f"scene-{i}") for i in range(args.scenes)]
    save_scenes(scenes, out / "scenes.jsonl")

    print(f"wrote {len(records)} QA records, {len(cases)} benchmark cases, "
          f"{len(scenes)} scenes under {out}/")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
