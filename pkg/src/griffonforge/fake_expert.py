"""Deterministic fake chat-completion endpoint for tests and offline demos.

Speaks just enough of the chat-completions wire format for ChatClient:
POST /chat/completions with {"model", "messages"} returns a reply derived
purely from the request content, so identical requests always get identical
replies. Admin endpoints expose call counters (including the maximum number
of concurrently in-flight requests) and let tests inject failures/latency.

Run standalone via scripts/run_fake_expert.py or embed with
``with FakeExpertServer() as server: ...``.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional

_STOPWORDS = {
    "a", "an", "the", "is", "are", "was", "were", "there", "any", "of", "to",
    "in", "on", "at", "it", "this", "that", "what", "which", "who", "how",
    "many", "much", "does", "do", "did", "and", "or", "than", "image",
}

_ADJECTIVES = ["quiet", "bright", "round", "tall", "worn", "tidy", "plain", "odd"]
_NOUNS = ["crate", "kiosk", "bench", "pylon", "awning", "cart", "ledge", "stall"]


def _digest(text: str) -> bytes:
    return hashlib.sha256(text.encode("utf-8")).digest()


def _extract_question(prompt: str) -> str:
    match = re.search(r"For the question:'(.*?)',", prompt, re.DOTALL)
    return match.group(1) if match else prompt


def _entities(question: str) -> list[str]:
    words = re.findall(r"[a-z]+", question.lower())
    seen: list[str] = []
    for word in words:
        if word not in _STOPWORDS and word not in seen:
            seen.append(word)
    return seen[:4] or ["scene"]


def default_responder(prompt: str, image_url: str) -> str:
    """Rule-based reply, a pure function of the request content."""
    if "identify and focus on the specific physical objects" in prompt:
        return "\n".join(_entities(_extract_question(prompt)))
    if "identify the task used to gather" in prompt:
        question = _extract_question(prompt)
        entities = _entities(question)
        lowered = question.lower()
        if entities == ["scene"]:
            return "Global Understanding"
        if any(w in lowered for w in ("text", "say", "says", "written", "word")):
            return "Text Recognition: " + ", ".join(entities)
        if lowered.startswith("describe"):
            return "Caption"
        return "Visual Grounding: " + ", ".join(entities)
    digest = _digest(image_url + "|" + prompt)
    if "marking each mentioned object" in prompt:
        adjective = _ADJECTIVES[digest[0] % len(_ADJECTIVES)]
        noun_a = _NOUNS[digest[1] % len(_NOUNS)]
        noun_b = _NOUNS[digest[2] % len(_NOUNS)]
        x1, y1 = digest[3] % 40, digest[4] % 40
        x2, y2 = x1 + 1 + digest[5] % 60, y1 + 1 + digest[6] % 60
        u1, v1 = 100 + digest[7] % 40, 100 + digest[8] % 40
        u2, v2 = u1 + 1 + digest[9] % 60, v1 + 1 + digest[10] % 60
        return (
            f"A {adjective} {noun_a} [{x1}, {y1}, {x2}, {y2}] stands beside "
            f"a {noun_b} [{u1}, {v1}, {u2}, {v2}]."
        )
    if prompt.startswith("Describe the image"):
        adjective = _ADJECTIVES[digest[0] % len(_ADJECTIVES)]
        noun = _NOUNS[digest[1] % len(_NOUNS)]
        return f"A {adjective} scene centered on a {noun}, tag {digest[:4].hex()}."
    if prompt.startswith("Read out all text"):
        return f'The visible text says "{digest[:3].hex().upper()}".'
    if prompt.startswith("Give a global description"):
        noun = _NOUNS[digest[2] % len(_NOUNS)]
        return f"Overall the image shows a {noun}-filled area, tag {digest[:4].hex()}."
    return "Global Understanding"


class FakeExpertServer:
    """In-process threaded fake endpoint with call accounting.

    ``responder(prompt, image_url)`` may be supplied to script replies; when
    it returns None the deterministic default takes over.
    """

    def __init__(
        self,
        responder: Optional[Callable[[str, str], Optional[str]]] = None,
        delay: float = 0.0,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.responder = responder
        self.delay = delay
        self.calls = 0
        self.inflight = 0
        self.inflight_max = 0
        self.fail_count = 0
        self.fail_status = 500
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):  # silence request logging
                pass

            def _send(self, status: int, obj: dict) -> None:
                body = json.dumps(obj).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self) -> None:
                if self.path == "/admin/stats":
                    with outer._lock:
                        self._send(
                            200,
                            {
                                "calls": outer.calls,
                                "inflight": outer.inflight,
                                "inflight_max": outer.inflight_max,
                            },
                        )
                else:
                    self._send(404, {"error": "not found"})

            def do_POST(self) -> None:
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    payload = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self._send(400, {"error": "bad json"})
                    return
                if self.path == "/admin/reset":
                    with outer._lock:
                        outer.calls = outer.inflight_max = 0
                        outer.fail_count = 0
                    self._send(200, {"ok": True})
                    return
                if self.path == "/admin/fail":
                    with outer._lock:
                        outer.fail_count = int(payload.get("count", 1))
                        outer.fail_status = int(payload.get("status", 500))
                    self._send(200, {"ok": True})
                    return
                if self.path not in ("/chat/completions", "/v1/chat/completions"):
                    self._send(404, {"error": "not found"})
                    return

                with outer._lock:
                    outer.calls += 1
                    outer.inflight += 1
                    outer.inflight_max = max(outer.inflight_max, outer.inflight)
                    should_fail = outer.fail_count > 0
                    if should_fail:
                        outer.fail_count -= 1
                try:
                    if outer.delay:
                        time.sleep(outer.delay)
                    if should_fail:
                        self._send(outer.fail_status, {"error": "injected failure"})
                        return
                    prompt, image_url = _last_user_content(payload.get("messages", []))
                    text = None
                    if outer.responder is not None:
                        text = outer.responder(prompt, image_url)
                    if text is None:
                        text = default_responder(prompt, image_url)
                    self._send(
                        200,
                        {
                            "id": f"fake-{outer.calls}",
                            "model": payload.get("model", "fake"),
                            "choices": [{"message": {"role": "assistant", "content": text}}],
                        },
                    )
                finally:
                    with outer._lock:
                        outer.inflight -= 1

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "FakeExpertServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "FakeExpertServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def _last_user_content(messages: list) -> tuple[str, str]:
    prompt, image_url = "", ""
    for message in messages:
        if not isinstance(message, dict) or message.get("role") != "user":
            continue
        content = message.get("content", "")
        if isinstance(content, str):
            prompt, image_url = content, ""
            continue
        text_parts = []
        url = ""
        for part in content:
            if part.get("type") == "text":
                text_parts.append(part.get("text", ""))
            elif part.get("type") == "image_url":
                url = part.get("image_url", {}).get("url", "")
        prompt, image_url = "\n".join(text_parts), url
    return prompt, image_url
