import json
import threading
import urllib.error
import urllib.request
from pathlib import Path

import pytest

from vlmadapter import AdapterConfig, make_server

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def start_server():
    """Factory: boot a server for a config, yield its base url, tear down."""
    servers = []

    def boot(config: AdapterConfig) -> str:
        server = make_server(config, port=0)
        thread = threading.Thread(
            target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True
        )
        thread.start()
        servers.append((server, thread))
        host, port = server.server_address[:2]
        return f"http://{host}:{port}"

    yield boot
    for server, thread in servers:
        server.shutdown()
        server.server_close()
        thread.join(timeout=5)


@pytest.fixture
def echo_url(start_server) -> str:
    return start_server(AdapterConfig(mode="mock_echo"))


def post_raw(base_url: str, path: str, raw: bytes):
    """POST bytes, return (status, headers, body bytes); no raise on 4xx."""
    request = urllib.request.Request(
        base_url + path,
        data=raw,
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request, timeout=10) as response:
            return response.status, dict(response.headers), response.read()
    except urllib.error.HTTPError as exc:
        return exc.code, dict(exc.headers), exc.read()


def post_json(base_url: str, path: str, payload):
    status, headers, raw = post_raw(
        base_url, path, json.dumps(payload).encode("utf-8")
    )
    return status, headers, json.loads(raw.decode("utf-8"))


def get(base_url: str, path: str):
    try:
        with urllib.request.urlopen(base_url + path, timeout=10) as response:
            return response.status, json.loads(response.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read().decode("utf-8"))
