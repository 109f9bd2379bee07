"""Shared test fixtures: a scripted fake LMM HTTP server and small helpers."""

from __future__ import annotations

import json
import struct
import threading
import time
import zlib
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from lmmclassify.gateway import ProviderConfig

REPO_ROOT = Path(__file__).resolve().parent.parent
DEMO_DIR = REPO_ROOT / "fixtures" / "demo"
REDCAR_DIR = DEMO_DIR / "redcar"

API_KEY_VAR = "FAKE_LMM_KEY"
API_KEY = "test-key-123"


def tiny_png(rgb: tuple[int, int, int] = (10, 20, 30)) -> bytes:
    """A minimal valid 1x1 PNG, unique per color."""

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (
            struct.pack(">I", len(payload))
            + tag
            + payload
            + struct.pack(">I", zlib.crc32(tag + payload))
        )

    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 2, 0, 0, 0)
    idat = zlib.compress(b"\x00" + bytes(rgb))
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", idat)
        + chunk(b"IEND", b"")
    )


class FakeLmmServer:
    """In-process HTTP stand-in for a generate-content endpoint.

    Behavior is scripted: ``script`` entries are consumed one per request
    (status overrides, refusals, answers); when the script is empty,
    ``answers`` maps prompt text to an answer, else a default is served.
    Every request is logged with a monotonic timestamp for rate assertions.
    """

    def __init__(self, require_key: str | None = API_KEY):
        self.require_key = require_key
        self.script: list[dict] = []
        self.answers: dict[str, str] = {}
        self.default_answer = "fake answer"
        self.requests: list[dict] = []
        self.lock = threading.Lock()
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output quiet
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                prompt = body["contents"][0]["parts"][0]["text"]
                with server.lock:
                    server.requests.append(
                        {
                            "at": time.monotonic(),
                            "path": self.path,
                            "prompt": prompt,
                            "body": body,
                            "key": self.headers.get("x-goog-api-key"),
                        }
                    )
                    step = server.script.pop(0) if server.script else {}
                if server.require_key and self.headers.get("x-goog-api-key") != server.require_key:
                    self._send(401, {"error": "bad key"})
                    return
                if "status" in step:
                    self._send(step["status"], {"error": f"scripted {step['status']}"})
                    return
                if step.get("refusal"):
                    self._send(
                        200,
                        {"candidates": [{"finishReason": "SAFETY", "content": {"parts": []}}]},
                    )
                    return
                if step.get("block"):
                    self._send(200, {"promptFeedback": {"blockReason": "SAFETY"}})
                    return
                answer = step.get("answer")
                if answer is None:
                    answer = server.answers.get(prompt, server.default_answer)
                self._send(
                    200,
                    {
                        "candidates": [
                            {
                                "finishReason": "STOP",
                                "content": {"parts": [{"text": answer}]},
                            }
                        ]
                    },
                )

            def _send(self, status: int, payload: dict):
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True
        )

    @property
    def endpoint(self) -> str:
        host, port = self._httpd.server_address
        return f"http://{host}:{port}"

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()

    def request_count(self) -> int:
        with self.lock:
            return len(self.requests)

    def request_times(self) -> list[float]:
        with self.lock:
            return [r["at"] for r in self.requests]

    def provider_config(self, **overrides) -> ProviderConfig:
        settings = {
            "kind": "live-api",
            "endpoint": self.endpoint,
            "credential_ref": API_KEY_VAR,
            "rate_limit_rps": 1000.0,
            "max_retries": 3,
            "backoff_base_ms": 1,
        }
        settings.update(overrides)
        return ProviderConfig(**settings)


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(name): a released acceptance criterion; each gets one summary line",
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and (report.when == "call" or report.outcome != "passed"):
        report.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL/SKIP line per acceptance criterion."""
    rank = {"FAIL": 2, "PASS": 1, "SKIP": 0}
    verdicts: dict[str, str] = {}
    for outcome, label in (
        ("passed", "PASS"),
        ("failed", "FAIL"),
        ("error", "FAIL"),
        ("skipped", "SKIP"),
    ):
        for report in terminalreporter.stats.get(outcome, []):
            for name, value in getattr(report, "user_properties", []):
                if name != "criterion":
                    continue
                if rank[label] >= rank.get(verdicts.get(value), -1):
                    verdicts[value] = label
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for value, label in verdicts.items():
            terminalreporter.write_line(f"{label}: {value}")


@pytest.fixture
def fake_server(monkeypatch):
    monkeypatch.setenv(API_KEY_VAR, API_KEY)
    monkeypatch.delenv("NO_NETWORK", raising=False)
    server = FakeLmmServer().start()
    yield server
    server.stop()


@pytest.fixture
def image_file(tmp_path):
    path = tmp_path / "image.png"
    path.write_bytes(tiny_png())
    return path


@pytest.fixture
def demo_dir():
    assert DEMO_DIR.is_dir(), "committed demo fixtures missing; run scripts/make_demo_fixtures.py"
    return DEMO_DIR


@pytest.fixture
def redcar_dir():
    assert REDCAR_DIR.is_dir()
    return REDCAR_DIR
