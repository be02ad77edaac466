"""HTTP stand-in for a vision-language model runtime.

Serves the generation wire protocol used by the inference pipeline:
POST /v1/generate with a JSON body {prompt, image_path or image,
max_new_tokens, temperature, system_id} answered by {text, model}, and
GET /healthz for liveness. Three modes:

  mock_echo     reply with the prompt's final query sentence plus a
                short digest of the canonical request, so repeated
                requests are byte-identical and distinct requests are
                distinguishable.
  mock_canned   look replies up in a prompt-hash table, falling back to
                a fixed text (flagged by an X-Canned-Miss header) on
                unknown requests.
  passthrough   forward the request body to a real model server and
                relay its response.

Both mock modes are pure functions of the request body: no state, no
accelerator, safe under concurrent requests.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import logging
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping

logger = logging.getLogger(__name__)

GENERATE_PATH = "/v1/generate"
HEALTH_PATH = "/healthz"
MISS_HEADER = "X-Canned-Miss"

DEFAULT_MAX_NEW_TOKENS = 512
DEFAULT_TEMPERATURE = 0.0
DEFAULT_SYSTEM_ID = "system-1"
DEFAULT_FALLBACK_TEXT = "I cannot answer that."

MODES = ("mock_echo", "mock_canned", "passthrough")


class AdapterError(Exception):
    """Configuration or startup failure."""


class RequestError(ValueError):
    """Client sent a body the protocol does not allow; maps to 400."""


@dataclass(frozen=True)
class AdapterConfig:
    mode: str = "mock_echo"
    canned: Mapping[str, str] = field(default_factory=dict)
    fallback_text: str = DEFAULT_FALLBACK_TEXT
    upstream_url: str = ""
    model_name: str = ""

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise AdapterError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.mode == "passthrough" and not self.upstream_url:
            raise AdapterError("passthrough mode requires an upstream url")

    @property
    def reported_model(self) -> str:
        return self.model_name or self.mode.replace("_", "-")


def load_canned(path: str | Path) -> dict[str, str]:
    """Read a canned-reply table: JSON object mapping request hash to text."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise AdapterError(f"cannot load canned file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise AdapterError(f"canned file {path} must hold a JSON object")
    for key, value in data.items():
        if not isinstance(value, str):
            raise AdapterError(f"canned entry {key!r} must map to a string")
    return dict(data)


# --------------------------------------------------------------- body

_REQUIRED_PROMPT = "request must carry a non-empty string 'prompt'"


def parse_generate_body(raw: bytes) -> dict:
    """Validate a /v1/generate body into its canonical field dict.

    A base64 'image' and an 'image_path' are mutually exclusive; when
    the pixels come inline the path is treated as empty for hashing.
    """
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise RequestError(f"body is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise RequestError("body must be a JSON object")

    prompt = data.get("prompt")
    if not isinstance(prompt, str) or not prompt:
        raise RequestError(_REQUIRED_PROMPT)

    has_image = "image" in data
    has_path = "image_path" in data
    if has_image and has_path:
        raise RequestError("send either 'image' or 'image_path', not both")
    image_path = ""
    if has_path:
        image_path = data["image_path"]
        if not isinstance(image_path, str):
            raise RequestError("'image_path' must be a string")
    if has_image:
        image = data["image"]
        if not isinstance(image, str):
            raise RequestError("'image' must be a base64 string")
        try:
            base64.b64decode(image, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise RequestError(f"'image' is not valid base64: {exc}") from exc

    max_new_tokens = data.get("max_new_tokens", DEFAULT_MAX_NEW_TOKENS)
    if isinstance(max_new_tokens, bool) or not isinstance(max_new_tokens, int):
        raise RequestError("'max_new_tokens' must be an integer")
    if max_new_tokens < 1:
        raise RequestError("'max_new_tokens' must be at least 1")

    temperature = data.get("temperature", DEFAULT_TEMPERATURE)
    if isinstance(temperature, bool) or not isinstance(temperature, (int, float)):
        raise RequestError("'temperature' must be a number")
    temperature = float(temperature)
    if temperature < 0:
        raise RequestError("'temperature' must be non-negative")

    system_id = data.get("system_id", DEFAULT_SYSTEM_ID)
    if not isinstance(system_id, str) or not system_id:
        raise RequestError("'system_id' must be a non-empty string")

    return {
        "prompt": prompt,
        "image_path": image_path,
        "max_new_tokens": max_new_tokens,
        "temperature": temperature,
        "system_id": system_id,
    }


# --------------------------------------------------------------- mocks


def _canonical(payload: Mapping) -> bytes:
    return json.dumps(
        payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def echo_digest(fields: Mapping) -> str:
    """8-hex-digit digest over the canonical request fields.

    Matches the in-process echo stub the pipeline ships, so a run
    pointed at this server reproduces the same predictions byte for
    byte.
    """
    return hashlib.sha256(_canonical(fields)).hexdigest()[:8]


_FINAL_SENTENCE_RE = re.compile(r"[.?!]\s+")
_PROMPT_PREFIX = "USER: <image> "
_PROMPT_SUFFIX = " ASSISTANT:"


def echo_text(prompt: str, digest: str) -> str:
    """The prompt's final query sentence tagged with the digest."""
    body = prompt
    if body.startswith(_PROMPT_PREFIX):
        body = body[len(_PROMPT_PREFIX):]
    if body.endswith(_PROMPT_SUFFIX):
        body = body[: -len(_PROMPT_SUFFIX)]
    boundaries = list(_FINAL_SENTENCE_RE.finditer(body))
    if boundaries:
        body = body[boundaries[-1].end():]
    return f"{body} [echo {digest}]".strip()


def canned_key(prompt: str, image_path: str) -> str:
    """Full stable hash keying the canned table; survives field reorder."""
    return hashlib.sha256(
        _canonical({"prompt": prompt, "image_path": image_path})
    ).hexdigest()


# -------------------------------------------------------------- server


def _forward(upstream_url: str, raw: bytes) -> tuple[int, bytes]:
    url = upstream_url.rstrip("/") + GENERATE_PATH
    request = urllib.request.Request(
        url, data=raw, headers={"Content-Type": "application/json"}, method="POST"
    )
    try:
        with urllib.request.urlopen(request, timeout=60) as response:
            return response.status, response.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()
    except (urllib.error.URLError, OSError, TimeoutError) as exc:
        raise AdapterError(f"upstream {url} unreachable: {exc}") from exc


def make_handler(config: AdapterConfig) -> type[BaseHTTPRequestHandler]:
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # route through logging, not stderr
            logger.debug("%s %s", self.address_string(), fmt % args)

        def _send_json(
            self, status: int, payload: Mapping, headers: Mapping[str, str] = ()
        ) -> None:
            body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            for name, value in dict(headers).items():
                self.send_header(name, value)
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self) -> None:
            if self.path == HEALTH_PATH:
                self._send_json(200, {"status": "ok", "mode": config.mode})
            else:
                self._send_json(404, {"error": f"no such path {self.path}"})

        def do_POST(self) -> None:
            if self.path != GENERATE_PATH:
                self._send_json(404, {"error": f"no such path {self.path}"})
                return
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length)
            try:
                fields = parse_generate_body(raw)
            except RequestError as exc:
                self._send_json(400, {"error": str(exc)})
                return

            if config.mode == "mock_echo":
                text = echo_text(fields["prompt"], echo_digest(fields))
                self._send_json(
                    200, {"text": text, "model": config.reported_model}
                )
            elif config.mode == "mock_canned":
                key = canned_key(fields["prompt"], fields["image_path"])
                hit = config.canned.get(key)
                if hit is None:
                    self._send_json(
                        200,
                        {
                            "text": config.fallback_text,
                            "model": config.reported_model,
                        },
                        headers={MISS_HEADER: key},
                    )
                else:
                    self._send_json(
                        200, {"text": hit, "model": config.reported_model}
                    )
            else:  # passthrough
                try:
                    status, body = _forward(config.upstream_url, raw)
                except AdapterError as exc:
                    self._send_json(502, {"error": str(exc)})
                    return
                self.send_response(status)
                self.send_header("Content-Type", "application/json; charset=utf-8")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

    return Handler


def make_server(config: AdapterConfig, port: int = 0, host: str = "127.0.0.1"):
    """Bind a threading HTTP server; port 0 picks a free one."""
    return ThreadingHTTPServer((host, port), make_handler(config))


def serve(config: AdapterConfig, port: int, host: str = "127.0.0.1") -> None:
    """Run until interrupted."""
    server = make_server(config, port, host)
    bound_host, bound_port = server.server_address[:2]
    logger.info(
        "serving %s on http://%s:%d (model %r)",
        config.mode,
        bound_host,
        bound_port,
        config.reported_model,
    )
    try:
        server.serve_forever()
    finally:
        server.server_close()
