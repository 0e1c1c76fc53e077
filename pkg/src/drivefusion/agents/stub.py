"""Scripted chat-completion server for exercising the remote backend offline.

Fixture format (JSON object, every key optional)::

    {
      "default": "valid",              # mode used when nothing else applies
      "roles": {"CausalAnalyst": "invalid"},   # per-role mode
      "script": ["malformed", "valid"],        # consumed one per request first
      "delay": 2.0                      # seconds a "timeout" reply stalls
    }

Modes:

``valid``
    the deterministic answer for the prompt's role and context, wrapped in
    the structured-output sentinels
``malformed``
    prose without a structured section
``invalid``
    a well-typed payload that breaks a domain invariant of the role
``timeout``
    a valid answer sent only after ``delay`` seconds
``error``
    HTTP 500

Each reply echoes the ``X-Correlation-ID`` request header.  Every request is
logged as ``(role, mode, correlation_id)`` in :attr:`StubServer.log`.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any

from .. import codec
from .prompts import extract_context, extract_role
from .roles import AgentRole, RuleSet, run_rules
from .structured import BEGIN, END

MODES = ("valid", "malformed", "invalid", "timeout", "error")


@dataclass
class StubScript:
    default: str = "valid"
    roles: dict[str, str] = field(default_factory=dict)
    script: list[str] = field(default_factory=list)
    delay: float = 2.0

    def __post_init__(self):
        for mode in (self.default, *self.roles.values(), *self.script):
            if mode not in MODES:
                raise ValueError(f"unknown stub mode {mode!r}")
        for role in self.roles:
            AgentRole(role)

    @classmethod
    def from_json(cls, text: str) -> "StubScript":
        return codec.loads(cls, text)


def _break_invariant(role: AgentRole, data: Any) -> Any:
    """Mutate a valid JSON payload so that it violates the role's invariants."""
    if role is AgentRole.FILTRATION:
        data["thresholds"]["angular_velocity_max"] = -1.0
    elif role in (AgentRole.LIDAR_DESCRIPTOR, AgentRole.VISION_DESCRIPTOR):
        data["t_next"] = data["t"]
    elif role is AgentRole.VEHICLE_ANALYZER:
        if data["per_object_delta"]:
            first = sorted(data["per_object_delta"])[0]
            data["per_object_delta"][first] = -1.0
        else:
            data["flags"] = []
    elif role is AgentRole.ENV_CHANGE_DETECTOR:
        data["t_to"] = data["t_from"]
    elif role is AgentRole.CAUSAL_ANALYST:
        if data:
            data[0]["confidence"] = 1.7
        else:
            data.append(
                {"object_id": 0, "origin": "self-moving", "confidence": 1.7, "caution": False,
                 "rationale": "", "delta_over_window": [0.0, 0.0, 0.0]}
            )
    elif role is AgentRole.RESPONSE_AGGREGATOR:
        data["chosen_response"]["risk_reduction"] = 1.5
    return data


class StubServer:
    """Context manager running the stub on an ephemeral localhost port."""

    def __init__(self, script: StubScript | None = None, rules: RuleSet = RuleSet()):
        self.script = script or StubScript()
        self.rules = rules
        self.log: list[tuple[str, str, str]] = []
        self._pending = list(self.script.script)
        self._lock = threading.Lock()
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def _mode(self, role: AgentRole) -> str:
        with self._lock:
            if self._pending:
                return self._pending.pop(0)
        return self.script.roles.get(role.value, self.script.default)

    def reply(self, body: dict, correlation_id: str) -> tuple[int, str, float]:
        """Status code, message content and delay for one request body."""
        prompt = body["messages"][-1]["content"]
        role = extract_role(prompt)
        mode = self._mode(role)
        with self._lock:
            self.log.append((role.value, mode, correlation_id))
        if mode == "error":
            return 500, "", 0.0
        if mode == "malformed":
            return 200, "I looked at the scene and everything seems fine.", 0.0
        data = codec.to_jsonable(run_rules(role, extract_context(prompt), self.rules))
        if mode == "invalid":
            data = _break_invariant(role, data)
        content = f"Analysis complete.\n{BEGIN}\n{json.dumps(data, sort_keys=True)}\n{END}\n"
        return 200, content, self.script.delay if mode == "timeout" else 0.0

    def __enter__(self) -> "StubServer":
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output quiet
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                cid = self.headers.get("X-Correlation-ID", "")
                status, content, delay = stub.reply(body, cid)
                if delay:
                    time.sleep(delay)
                payload = json.dumps(
                    {"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}
                ).encode()
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.send_header("X-Correlation-ID", cid)
                    self.end_headers()
                    self.wfile.write(payload)
                except (BrokenPipeError, ConnectionResetError):
                    pass  # client gave up waiting

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def mode_counts(self) -> dict[str, int]:
        out = {m: 0 for m in MODES}
        for _, mode, _ in self.log:
            out[mode] += 1
        return out
