"""In-process stub of an OpenAI-style chat-completions endpoint.

Serves canned JSON bodies in FIFO order (or via a callable), records every
request it receives, and can delay individual responses, which is how the
test suite checks that concurrent fan-out never reorders candidates. Bind
to port 0 and read ``server.url`` for the actual address.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def chat_completion_body(
    contents: list[str],
    completion_tokens: int | list[int] | None = None,
    finish_reason: str = "stop",
    per_choice_usage: bool = False,
    model: str = "stub-model",
) -> dict:
    """Build a canned chat-completions response for the given choice texts."""
    if isinstance(completion_tokens, int) or completion_tokens is None:
        tokens = [completion_tokens] * len(contents)
    else:
        tokens = list(completion_tokens)
    choices = []
    for i, (content, tok) in enumerate(zip(contents, tokens)):
        choice = {
            "index": i,
            "message": {"role": "assistant", "content": content},
            "finish_reason": finish_reason,
        }
        if per_choice_usage and tok is not None:
            choice["usage"] = {"completion_tokens": tok}
        choices.append(choice)
    body = {
        "id": "stub-cmpl",
        "object": "chat.completion",
        "model": model,
        "choices": choices,
    }
    if not per_choice_usage and tokens and tokens[0] is not None:
        body["usage"] = {
            "prompt_tokens": 0,
            "completion_tokens": sum(t for t in tokens if t is not None),
        }
    return body


class _Recorded:
    def __init__(self, raw: bytes, headers: dict):
        self.raw = raw
        self.headers = headers

    @property
    def json(self) -> dict:
        return json.loads(self.raw.decode("utf-8"))


class StubServer:
    """Context-managed stub endpoint.

    ``responses`` may be a list of (status, body_dict) or plain body dicts
    (status 200), consumed in request order and repeating the last entry
    when exhausted; or a callable ``(request_json, request_index) ->
    (status, body_dict)``. ``delay_for`` maps a request index to seconds of
    artificial latency before responding, or is a callable
    ``(request_json, request_index) -> seconds`` for content-based delays.
    """

    def __init__(self, responses, delay_for=None):
        self._responses = responses
        self._delay_for = delay_for if delay_for is not None else {}
        self.requests: list[_Recorded] = []
        self._lock = threading.Lock()
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # -- plumbing ------------------------------------------------------------

    def _next_response(self, request_json: dict, index: int):
        if callable(self._responses):
            return self._responses(request_json, index)
        entry = self._responses[min(index, len(self._responses) - 1)]
        if isinstance(entry, tuple):
            return entry
        return 200, entry

    def __enter__(self) -> "StubServer":
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length)
                with stub._lock:
                    index = len(stub.requests)
                    stub.requests.append(_Recorded(raw, dict(self.headers)))
                try:
                    body_json = json.loads(raw.decode("utf-8"))
                except json.JSONDecodeError:
                    body_json = {}
                if callable(stub._delay_for):
                    delay = stub._delay_for(body_json, index)
                else:
                    delay = stub._delay_for.get(index, 0.0)
                if delay:
                    time.sleep(delay)
                status, body = stub._next_response(body_json, index)
                payload = (
                    body.encode("utf-8")
                    if isinstance(body, str)
                    else json.dumps(body).encode("utf-8")
                )
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):  # silence per-request stderr noise
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc_info):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
        return False

    @property
    def url(self) -> str:
        assert self._server is not None, "server not started"
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"
