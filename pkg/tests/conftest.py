import pytest

from chainconsensus.demand import merton_jump_diffusion
from chainconsensus.env import EnvConfig

ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def cfg():
    return EnvConfig()


@pytest.fixture
def spike_trace():
    return merton_jump_diffusion(seed=13, length=100)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    key, title = marker.args
    prev_ok = ACCEPTANCE_RESULTS.get(key, (True, title))[0]
    ACCEPTANCE_RESULTS[key] = (prev_ok and report.passed, title)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=int):
        ok, title = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {title}")


class FakeChatServer:
    """Local OpenAI-style endpoint answering like a scripted strategy."""

    def __init__(self, strategy="midpoint", upstream_strategy=None, status=200):
        import http.server
        import json
        import threading

        from chainconsensus.llm import ScriptedProvider, user_request

        scripted = ScriptedProvider(strategy, upstream_strategy)
        server = self
        self.requests = []
        self.status = status

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                server.requests.append({"body": body,
                                        "auth": self.headers.get("Authorization")})
                if server.status != 200:
                    self.send_response(server.status)
                    self.end_headers()
                    return
                prompt = "\n".join(m["content"] for m in body["messages"] if m["role"] == "user")
                answer = scripted.complete(user_request(prompt))
                out = json.dumps({"choices": [{"message": {"content": answer}}]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(out)))
                self.end_headers()
                self.wfile.write(out)

            def log_message(self, *args):
                pass

        self.httpd = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1/chat/completions"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def fake_server():
    servers = []

    def make(**kw):
        s = FakeChatServer(**kw)
        servers.append(s)
        return s

    yield make
    for s in servers:
        s.close()


@pytest.fixture
def no_network(monkeypatch):
    """Fail loudly on any attempt to open a socket connection."""
    import socket

    def refuse(*args, **kwargs):
        raise AssertionError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)
