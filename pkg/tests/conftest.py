import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class _StubState:
    """Mutable behavior knobs for the stub chat-completions server."""

    def __init__(self):
        self.fail_first = 0  # serve this many 500s before succeeding
        self.always_fail = False
        self.no_usage = False  # omit the usage field from replies
        self.score_reply = None  # fixed completion text, for scorer tests
        self.requests = []
        self.lock = threading.Lock()


def _make_handler(state: _StubState):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # keep test output clean
            pass

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length) or b"{}")
            with state.lock:
                state.requests.append({
                    "path": self.path,
                    "payload": payload,
                    "auth": self.headers.get("Authorization"),
                })
                must_fail = state.always_fail or state.fail_first > 0
                if state.fail_first > 0:
                    state.fail_first -= 1
            if self.path.endswith("/tokenize"):
                tokens = payload["text"].split()
                limit = payload["limit"]
                body = {
                    "prefix": " ".join(tokens[:limit]),
                    "token_count": min(len(tokens), limit),
                    "truncated": len(tokens) > limit,
                }
                self._reply(200, body)
                return
            if must_fail:
                self._reply(500, {"error": "synthetic failure"})
                return
            text = state.score_reply or f"The answer is {payload.get('seed', 0) % 10}."
            body = {"choices": [{"message": {"role": "assistant", "content": text}}]}
            if not state.no_usage:
                body["usage"] = {"completion_tokens": len(text.split())}
            self._reply(200, body)

        def _reply(self, status, body):
            raw = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

    return Handler


@pytest.fixture
def stub_server():
    state = _StubState()
    server = ThreadingHTTPServer(("127.0.0.1", 0), _make_handler(state))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base_url = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        yield base_url, state
    finally:
        server.shutdown()
        thread.join(timeout=5)
