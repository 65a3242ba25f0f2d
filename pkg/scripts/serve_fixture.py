#!/usr/bin/env python3
"""Run the QA service on the built-in fixture corpus and scripted stubs.

Fully offline: the chat model is a scripted stub keyed on the 25 demo
queries and the embedder is the deterministic hash stub.  Useful for UI
development and end-to-end tests.

    python scripts/serve_fixture.py --port 8777 [--store /tmp/fixture.db]
"""

from __future__ import annotations

import argparse

import uvicorn

from finrag.service import ServiceState, create_app
from finrag.synth import build_demo_pipeline


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8777)
    parser.add_argument("--store", default=":memory:", help="sqlite path (default: in-memory)")
    parser.add_argument("--token", default=None, help="optional bearer token")
    args = parser.parse_args()

    pipeline = build_demo_pipeline(args.store)
    app = create_app(ServiceState(pipeline=pipeline, token=args.token))
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


if __name__ == "__main__":
    main()
