#!/usr/bin/env python3
"""Run the bundled deterministic fake chat-completion endpoint.

Usage:
    python scripts/run_fake_expert.py --port 8399 [--delay 0.05]

Point an ExpertConfig's base_url at it, e.g. {"base_url": "http://127.0.0.1:8399"}.
"""

import argparse
import time

from griffonforge.fake_expert import FakeExpertServer


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8399)
    parser.add_argument("--delay", type=float, default=0.0, help="seconds of artificial latency per call")
    args = parser.parse_args()

    server = FakeExpertServer(delay=args.delay, host=args.host, port=args.port).start()
    print(f"fake expert listening on {server.base_url} (Ctrl-C to stop)")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
