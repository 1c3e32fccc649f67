from __future__ import annotations

import json
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable

import pytest

from actionpatterns.backends import BackendConfig, BackendKind, ChatHttpBackend, FixtureStore, RecordingBackend
from actionpatterns.evaluation import EvalSettings, build_candidates
from actionpatterns.model import ExtractionKind, GroundTruthEntry, load_ground_truth
from actionpatterns.prompts import render_slot_prompt

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data" / "ground_truth_sample.json"
FIXTURES = Path(__file__).resolve().parent / "fixtures"
GOLDEN = Path(__file__).resolve().parent / "golden"


class StubServer:
    """Local HTTP server whose replies come from ``handler(body) -> (status, payload[, headers])``."""

    def __init__(self, handler: Callable[[dict], tuple]):
        self.handler = handler
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                stub.requests.append(body)
                stub.headers.append(dict(self.headers))
                status, payload, *rest = stub.handler(body)
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    for key, value in (rest[0] if rest else {}).items():
                        self.send_header(key, value)
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass  # client gave up (timeout tests)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()


def chat_payload(text: str) -> dict:
    return {"id": "x", "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}]}


@pytest.fixture
def stub_server():
    servers: list[StubServer] = []

    def start(handler):
        server = StubServer(handler)
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.close()


@pytest.fixture(scope="session")
def ground_truth() -> list[GroundTruthEntry]:
    return load_ground_truth(DATA)


def record_oracle(
    entries: list[GroundTruthEntry],
    settings: EvalSettings,
    fixture_dir: Path,
    answer: Callable[[GroundTruthEntry, ExtractionKind, list[str]], str],
    model: str = "oracle-model",
) -> None:
    """Record chat answers for every (entry, kind) prompt through a stub server."""
    answers = {}
    for entry in entries:
        for kind in ExtractionKind:
            candidates = build_candidates(entry, kind, settings)
            tool = entry.tools[0] if kind is ExtractionKind.SPATIAL else None
            prompt = render_slot_prompt(kind, entry.action, entry.object, candidates, tool)
            answers[prompt.text] = answer(entry, kind, candidates)
    server = StubServer(lambda body: (200, chat_payload(answers[body["messages"][0]["content"]])))
    try:
        cfg = BackendConfig(BackendKind.CHAT_HTTP, model, endpoint=server.url, api_key_env="ORACLE_KEY")
        os.environ["ORACLE_KEY"] = "test"
        backend = RecordingBackend(ChatHttpBackend(cfg), FixtureStore(fixture_dir))
        for prompt in answers:
            backend.complete(backend.request(prompt))
    finally:
        os.environ.pop("ORACLE_KEY", None)
        server.close()


def perfect_answer(entry, kind, candidates):
    return ", ".join(entry.truth_labels(kind))


def useless_answer(entry, kind, candidates):
    truth = set(entry.truth_labels(kind))
    return ", ".join(c for c in candidates if c not in truth)


@pytest.fixture(scope="session")
def oracle_fixtures(tmp_path_factory, ground_truth):
    """Replay directories for a perfect and a useless backend over the full sample."""
    root = tmp_path_factory.mktemp("oracle")
    settings = EvalSettings()
    record_oracle(ground_truth, settings, root / "perfect", perfect_answer)
    record_oracle(ground_truth, settings, root / "useless", useless_answer)
    return {"perfect": root / "perfect", "useless": root / "useless"}
