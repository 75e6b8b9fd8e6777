import json
import shutil
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def corpus6_dir() -> Path:
    return FIXTURES / "corpus6"


@pytest.fixture
def eval3_dir() -> Path:
    return FIXTURES / "eval3"


@pytest.fixture
def eval3_copy(tmp_path: Path) -> Path:
    # run_evaluation writes into the tree, so tests get a throwaway copy
    dst = tmp_path / "eval3"
    shutil.copytree(FIXTURES / "eval3", dst)
    return dst


class StubHandler(BaseHTTPRequestHandler):
    """Chat-completions stub with a scriptable status sequence per server."""

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        server = self.server
        server.requests.append(
            {"body": body, "auth": self.headers.get("Authorization")}
        )
        script = server.script
        step = script[min(len(server.requests) - 1, len(script) - 1)]
        status = step["status"]
        if status == 200:
            responder = step.get("respond")
            if responder is not None:
                text = responder(body["messages"][-1]["content"])
            else:
                text = step.get("text", "echo: " + body["messages"][-1]["content"])
            payload = {"choices": [{"message": {"content": text}}]}
            data = json.dumps(payload).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
        else:
            self.send_response(status)
            for k, v in step.get("headers", {}).items():
                self.send_header(k, v)
            self.send_header("Content-Length", "0")
            self.end_headers()

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    """Start scripted chat-completion servers; returns (server, Endpoint)."""
    from casetime.llm import Endpoint

    servers = []

    def start(script):
        srv = ThreadingHTTPServer(("127.0.0.1", 0), StubHandler)
        srv.script = script
        srv.requests = []
        threading.Thread(target=srv.serve_forever, daemon=True).start()
        servers.append(srv)
        return srv, Endpoint(base_url=f"http://127.0.0.1:{srv.server_port}")

    yield start
    for srv in servers:
        srv.shutdown()
        srv.server_close()
