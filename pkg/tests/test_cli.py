import json
import os
import random
import signal
import socket
import subprocess
import sys
import time
from pathlib import Path

import httpx
import pytest

from griffonforge import cli
from griffonforge.curation_filters import qa_to_obj
from griffonforge.curation_service import SampleRecord, SampleState
from griffonforge.expert_client import ExpertAnalysis, PlanEntry
from griffonforge.fake_expert import FakeExpertServer
from griffonforge.trace_model import Capability, ImageRef
from griffonforge.synthetic import planted_corpus, random_benchmark_case
from griffonforge.eval_harness import save_benchmark

PYTHON = sys.executable


def run_cli(*args):
    return subprocess.run(
        [PYTHON, "-m", "griffonforge.cli", *args], capture_output=True, text=True, timeout=120
    )


def write_corpus(path: Path, plan: dict) -> dict:
    records, expected = planted_corpus(random.Random(17), plan)
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(qa_to_obj(record)) + "\n")
    return expected


# -- filter -------------------------------------------------------------------


def test_filter_stats_match_planting_plan(tmp_path):
    plan = dict(yes_no=30, relation_keyword=20, attribute_keyword=10, duplicate=8, too_simple=6, no_criterion=26)
    expected = write_corpus(tmp_path / "in.jsonl", plan)
    result = run_cli(
        "filter", str(tmp_path / "in.jsonl"),
        "--out", str(tmp_path / "out.jsonl"),
        "--stats", str(tmp_path / "stats.json"),
    )
    assert result.returncode == 0, result.stderr
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["by_reason"] == {k: v for k, v in expected.items() if v}
    kept_lines = (tmp_path / "out.jsonl").read_text().splitlines()
    assert len(kept_lines) == stats["kept"]
    assert all(json.loads(line)["decision"]["keep"] for line in kept_lines)


def test_filter_empty_input_is_empty_output(tmp_path):
    (tmp_path / "in.jsonl").write_text("")
    result = run_cli("filter", str(tmp_path / "in.jsonl"), "--out", str(tmp_path / "out.jsonl"))
    assert result.returncode == 0
    assert (tmp_path / "out.jsonl").read_text() == ""


def test_filter_bad_json_exits_2_naming_line(tmp_path):
    (tmp_path / "in.jsonl").write_text('{"id": "a"}\nnot json\n')
    result = run_cli("filter", str(tmp_path / "in.jsonl"), "--out", str(tmp_path / "out.jsonl"))
    assert result.returncode == 2
    assert "line 1" in result.stderr or "line 2" in result.stderr


def test_filter_reads_stdin_writes_stdout(tmp_path):
    plan = dict(yes_no=3, relation_keyword=2, attribute_keyword=1, duplicate=0, too_simple=0, no_criterion=2)
    records, _ = planted_corpus(random.Random(3), plan)
    payload = "\n".join(json.dumps(qa_to_obj(r)) for r in records)
    result = subprocess.run(
        [PYTHON, "-m", "griffonforge.cli", "filter", "-", "--out", "-"],
        input=payload, capture_output=True, text=True, timeout=60,
    )
    assert result.returncode == 0
    kept = [json.loads(line) for line in result.stdout.splitlines()]
    assert len(kept) == 6
    # stdout carries only data lines; logs go to stderr
    for line in result.stdout.splitlines():
        json.loads(line)


# -- annotate -----------------------------------------------------------------


def expert_config_file(tmp_path: Path, base_url: str) -> Path:
    path = tmp_path / "expert.json"
    path.write_text(json.dumps({
        "base_url": base_url,
        "model_name": "fake-expert",
        "cache_dir": str(tmp_path / "cache"),
        "max_inflight": 3,
        "backoff_base": 0.01,
    }))
    return path


def qa_lines(tmp_path: Path, n=4) -> Path:
    path = tmp_path / "qa.jsonl"
    image = {"id": "img1", "width": 640, "height": 480, "uri": "file:///img/1.jpg"}
    with open(path, "w", encoding="utf-8") as handle:
        for i in range(n):
            handle.write(json.dumps({
                "id": f"q{i}",
                "image": {**image, "id": f"img{i}"},
                "question": f"Is the red balloon number {i} below the white balloon?",
                "answer": "yes",
                "source_dataset": "demo",
            }) + "\n")
    return path


def test_annotate_is_deterministic_and_cached(tmp_path):
    with FakeExpertServer() as server:
        config = expert_config_file(tmp_path, server.base_url)
        qa_path = qa_lines(tmp_path)
        first = run_cli("annotate", str(qa_path), "--expert-config", str(config), "--out", str(tmp_path / "a.jsonl"))
        assert first.returncode == 0, first.stderr
        calls_after_first = httpx.get(f"{server.base_url}/admin/stats").json()["calls"]
        assert calls_after_first > 0
        second = run_cli("annotate", str(qa_path), "--expert-config", str(config), "--out", str(tmp_path / "b.jsonl"))
        assert second.returncode == 0, second.stderr
        calls_after_second = httpx.get(f"{server.base_url}/admin/stats").json()["calls"]
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert calls_after_second == calls_after_first


def test_annotate_unreachable_endpoint_exits_3(tmp_path):
    config = expert_config_file(tmp_path, "http://127.0.0.1:9")  # nothing listens there
    qa_path = qa_lines(tmp_path, n=2)
    result = run_cli("annotate", str(qa_path), "--expert-config", str(config), "--out", str(tmp_path / "o.jsonl"))
    assert result.returncode == 3


# -- serve --------------------------------------------------------------------


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def annotated_samples_file(tmp_path: Path, n=3) -> Path:
    path = tmp_path / "annotated.jsonl"
    with open(path, "w", encoding="utf-8") as handle:
        for i in range(n):
            sample = SampleRecord(
                id=f"s{i}",
                image=ImageRef(f"img{i}", 640, 480, f"file:///img/{i}.jpg"),
                question="Is there a dog?",
                answer="yes",
                analysis=ExpertAnalysis(("dog",), (PlanEntry(Capability.VISUAL_GROUNDING, ("dog",)),)),
                state=SampleState.AI_ANNOTATED,
            )
            handle.write(json.dumps(sample.to_obj(include_lease=False)) + "\n")
    return path


def wait_for(url: str, timeout=15.0) -> None:
    deadline = time.time() + timeout
    while time.time() < deadline:
        try:
            if httpx.get(url, timeout=1.0).status_code == 200:
                return
        except httpx.HTTPError:
            time.sleep(0.1)
    raise TimeoutError(f"service at {url} did not come up")


def start_serve(tmp_path: Path, port: int, import_file: Path | None = None):
    args = [
        PYTHON, "-m", "griffonforge.cli", "serve",
        "--data-dir", str(tmp_path / "data"),
        "--listen", f"127.0.0.1:{port}",
    ]
    if import_file:
        args += ["--import", str(import_file)]
    return subprocess.Popen(args, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)


def review_one(base: str, reviewer="alice"):
    sample = httpx.get(f"{base}/api/queue/next", params={"reviewer": reviewer}).json()
    httpx.post(
        f"{base}/api/samples/{sample['id']}/annotation",
        json={"reviewer": reviewer, "cues": [{"label": "dog", "type": "boxes", "boxes": [[10, 10, 80, 90]]}]},
    ).raise_for_status()
    response = httpx.post(
        f"{base}/api/samples/{sample['id']}/decision",
        json={"reviewer": reviewer, "decision": "accept", "notes": ""},
    )
    response.raise_for_status()
    return response.json()


def test_serve_healthz_and_kill_restart_retains_accepted(tmp_path):
    port = free_port()
    base = f"http://127.0.0.1:{port}"
    process = start_serve(tmp_path, port, annotated_samples_file(tmp_path))
    try:
        wait_for(f"{base}/healthz")
        assert review_one(base)["state"] == "accepted"
        assert httpx.get(f"{base}/api/stats").json()["accepted"] == 1
    finally:
        process.send_signal(signal.SIGKILL)
        process.wait(timeout=10)

    process = start_serve(tmp_path, port)
    try:
        wait_for(f"{base}/healthz")
        stats = httpx.get(f"{base}/api/stats").json()
        assert stats["accepted"] == 1
        assert stats["total"] == 3
        # leases died with the process: remaining samples are reviewable
        assert review_one(base, "bob")["state"] == "accepted"
    finally:
        process.send_signal(signal.SIGTERM)
        process.wait(timeout=10)


def test_serve_port_in_use_exits_4(tmp_path):
    port = free_port()
    blocker = socket.socket()
    blocker.bind(("127.0.0.1", port))
    blocker.listen(1)
    try:
        result = run_cli("serve", "--data-dir", str(tmp_path / "d"), "--listen", f"127.0.0.1:{port}")
        assert result.returncode == 4
    finally:
        blocker.close()


# -- eval ---------------------------------------------------------------------


def bench_file(tmp_path: Path, n=30, seed=2) -> Path:
    rng = random.Random(seed)
    path = tmp_path / "bench.jsonl"
    save_benchmark([random_benchmark_case(rng, f"c{i}") for i in range(n)], path)
    return path


def test_eval_oracle_reaches_min_accuracy(tmp_path):
    bench = bench_file(tmp_path)
    result = run_cli("eval", str(bench), "--backend", "oracle", "--min-accuracy", "1.0")
    assert result.returncode == 0, result.stderr
    assert "accuracy 1.0000" in result.stdout


def test_eval_corrupted_mock_below_floor_exits_5(tmp_path):
    bench = bench_file(tmp_path, n=40)
    result = run_cli(
        "eval", str(bench), "--backend", "mock", "--corruption", "0.5",
        "--seed", "7", "--min-accuracy", "1.0",
    )
    assert result.returncode == 5


def test_eval_toolkit_mode_accounts_n_tools_plus_2(tmp_path):
    bench = bench_file(tmp_path, n=3)
    report_path = tmp_path / "report.json"
    result = run_cli(
        "eval", str(bench), "--backend", "oracle", "--mode", "toolkit",
        "--n-tools", "2", "--tool-latency", "0.01", "--report", str(report_path),
    )
    assert result.returncode == 0, result.stderr
    report = json.loads(report_path.read_text())
    assert all(case["model_calls"] == 4 for case in report["cases"])


def test_eval_seeded_mock_reports_are_byte_identical_outside_timing(tmp_path):
    bench = bench_file(tmp_path, n=25)
    reports = []
    for name in ("r1.json", "r2.json"):
        result = run_cli(
            "eval", str(bench), "--backend", "mock", "--corruption", "0.3",
            "--seed", "11", "--report", str(tmp_path / name),
        )
        assert result.returncode == 0
        obj = json.loads((tmp_path / name).read_text())
        del obj["timing"]
        reports.append(json.dumps(obj, sort_keys=True))
    assert reports[0] == reports[1]


def test_eval_schema_error_exits_2(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "x"}\n')
    result = run_cli("eval", str(bad), "--backend", "oracle")
    assert result.returncode == 2


# -- config file and env overrides ---------------------------------------------


def test_config_file_and_env_precedence(tmp_path):
    config = tmp_path / "cfg"
    config.write_text("data_dir=/from/config\nlog_level=WARNING\n")
    parsed = cli.load_config_file(str(config))
    assert parsed == {"data_dir": "/from/config", "log_level": "WARNING"}
    assert cli.setting(None, "data_dir", parsed, "default") == "/from/config"
    os.environ["GRIFFONFORGE_DATA_DIR"] = "/from/env"
    try:
        assert cli.setting(None, "data_dir", parsed, "default") == "/from/env"
        assert cli.setting("/from/flag", "data_dir", parsed, "default") == "/from/flag"
    finally:
        del os.environ["GRIFFONFORGE_DATA_DIR"]


def test_export_subcommand_round_trips(tmp_path):
    from griffonforge.curation_service import CurationStore

    store = CurationStore(tmp_path / "data")
    samples_path = annotated_samples_file(tmp_path, n=1)
    with open(samples_path, encoding="utf-8") as handle:
        store.enqueue([SampleRecord.from_obj(json.loads(line)) for line in handle])
    grabbed = store.next_for_review("alice")
    from griffonforge.trace_model import BoundingBox, Boxes, VisualCue

    store.submit_annotation(grabbed.id, "alice", [VisualCue("dog", Boxes((BoundingBox(1, 1, 50, 50),)))])
    store.decide(grabbed.id, "alice", "accept")
    store.close()

    result = run_cli("export", "--data-dir", str(tmp_path / "data"), "--out", str(tmp_path / "exp.jsonl"))
    assert result.returncode == 0
    lines = (tmp_path / "exp.jsonl").read_text().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["state"] == "accepted"
