"""Local stand-in for a chat-completions endpoint, for tests and demos.

Serves canned assistant replies over HTTP on 127.0.0.1 from a background thread::

    with StubServer(['{"version": "directive/1", "verb": "done"}']) as stub:
        endpoint = EndpointConfig(stub.url)
        ...
    stub.requests  # decoded request bodies, in arrival order

Replies are consumed in order; the last one repeats.  A reply may also be a
callable taking the request body and returning the content string.
"""
from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class StubServer:
    def __init__(self, replies, status: int = 200, delay: float = 0.0):
        self.replies = list(replies)
        self.status = status
        self.delay = delay
        self.requests = []
        self._lock = threading.Lock()
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self._thread = None

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1"

    def _next_reply(self, body):
        with self._lock:
            self.requests.append(body)
            reply = self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
        return reply(body) if callable(reply) else reply

    def _handler(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except ValueError:
                    body = None
                if not self.path.endswith("/chat/completions") or body is None:
                    self._send(404, {"error": "not found"})
                    return
                content = stub._next_reply(body)
                if stub.delay:
                    time.sleep(stub.delay)
                if stub.status != 200:
                    self._send(stub.status, {"error": "stub failure"})
                    return
                self._send(200, {
                    "id": f"stub-{len(stub.requests)}",
                    "object": "chat.completion",
                    "model": body.get("model", "stub"),
                    "choices": [{"index": 0, "finish_reason": "stop",
                                 "message": {"role": "assistant", "content": content}}],
                })

            def _send(self, code, payload):
                data = json.dumps(payload).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                try:
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

            def log_message(self, *args):
                pass

        return Handler

    def start(self) -> "StubServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
