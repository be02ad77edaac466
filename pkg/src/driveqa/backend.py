"""VLM backend transport.

One wire contract: POST {base_url}/v1/generate with a JSON body
{prompt, image (base64) OR image_path, max_new_tokens, temperature,
system_id}. 200 returns {text, model}; any other status returns
{error}. GET {base_url}/healthz answers 200 when the service is up.

EchoBackend is an in-process stand-in with the same observable shape:
its reply is a deterministic function of the request payload, so runs
against it are reproducible and prompt changes are detectable.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass
from typing import Protocol

import requests

logger = logging.getLogger(__name__)

GENERATE_PATH = "/v1/generate"
HEALTH_PATH = "/healthz"
DEFAULT_MAX_NEW_TOKENS = 512
DEFAULT_TEMPERATURE = 0.0


class BackendError(Exception):
    """Request failed after all retry attempts (or was rejected)."""


@dataclass(frozen=True)
class BackendRequest:
    prompt: str
    image_path: str
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    system_id: str = "system-1"

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens {self.max_new_tokens} must be >= 1")
        if self.temperature < 0:
            raise ValueError(f"temperature {self.temperature} must be >= 0")


@dataclass(frozen=True)
class BackendResponse:
    text: str
    model: str


class Backend(Protocol):
    def generate(self, request: BackendRequest) -> BackendResponse: ...


def wire_payload(request: BackendRequest, send_base64: bool = False) -> dict:
    """JSON body for the generate endpoint.

    send_base64 inlines the image file as base64 under "image"; the
    default sends "image_path" and lets the server read the file.
    """
    payload: dict = {
        "prompt": request.prompt,
        "max_new_tokens": request.max_new_tokens,
        "temperature": request.temperature,
        "system_id": request.system_id,
    }
    if send_base64:
        with open(request.image_path, "rb") as fh:
            payload["image"] = base64.b64encode(fh.read()).decode("ascii")
    else:
        payload["image_path"] = request.image_path
    return payload


def echo_digest(
    prompt: str,
    image_path: str,
    max_new_tokens: int,
    temperature: float,
    system_id: str,
) -> str:
    """Stable 8-hex-digit digest of a request's canonical payload."""
    canonical = json.dumps(
        {
            "prompt": prompt,
            "image_path": image_path,
            "max_new_tokens": max_new_tokens,
            "temperature": temperature,
            "system_id": system_id,
        },
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:8]


_FINAL_SENTENCE_RE = re.compile(r"[.?!]\s+")


def echo_text(prompt: str, digest: str) -> str:
    """Echo reply: the prompt's final query sentence plus a digest tag."""
    body = prompt
    prefix = "USER: <image> "
    suffix = " ASSISTANT:"
    if body.startswith(prefix):
        body = body[len(prefix):]
    if body.endswith(suffix):
        body = body[: -len(suffix)]
    boundaries = list(_FINAL_SENTENCE_RE.finditer(body))
    if boundaries:
        body = body[boundaries[-1].end():]
    return f"{body} [echo {digest}]".strip()


class EchoBackend:
    """Deterministic local backend; no network, no model."""

    def __init__(self) -> None:
        self.calls = 0

    def generate(self, request: BackendRequest) -> BackendResponse:
        self.calls += 1
        digest = echo_digest(
            request.prompt,
            request.image_path,
            request.max_new_tokens,
            request.temperature,
            request.system_id,
        )
        return BackendResponse(text=echo_text(request.prompt, digest), model="echo")


class HttpBackend:
    """Client for the generate endpoint with bounded retries.

    retries counts total attempts. Transport errors and 5xx responses
    back off exponentially (backoff_ms * 2^attempt) and retry; 4xx
    responses fail immediately since resending the same body cannot
    help.
    """

    def __init__(
        self,
        base_url: str,
        timeout_ms: int = 60_000,
        retries: int = 3,
        backoff_ms: int = 250,
        send_base64: bool = False,
        session: requests.Session | None = None,
    ) -> None:
        if retries < 1:
            raise ValueError(f"retries {retries} must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_ms / 1000.0
        self.retries = retries
        self.backoff_ms = backoff_ms
        self.send_base64 = send_base64
        self._session = session or requests.Session()

    def check_health(self) -> bool:
        try:
            response = self._session.get(
                self.base_url + HEALTH_PATH, timeout=self.timeout_s
            )
        except requests.RequestException:
            return False
        return response.status_code == 200

    def generate(self, request: BackendRequest) -> BackendResponse:
        try:
            payload = wire_payload(request, self.send_base64)
        except OSError as exc:
            raise BackendError(f"cannot read image {request.image_path}: {exc}")
        url = self.base_url + GENERATE_PATH
        last_error = ""
        for attempt in range(self.retries):
            if attempt:
                time.sleep(self.backoff_ms * (2 ** (attempt - 1)) / 1000.0)
            try:
                response = self._session.post(
                    url, json=payload, timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                logger.warning("attempt %d/%d: %s", attempt + 1, self.retries, last_error)
                continue
            if response.status_code == 200:
                try:
                    body = response.json()
                except ValueError:
                    raise BackendError("200 response with non-JSON body")
                if "text" not in body:
                    raise BackendError("200 response missing 'text'")
                return BackendResponse(
                    text=str(body["text"]), model=str(body.get("model", ""))
                )
            detail = ""
            try:
                detail = str(response.json().get("error", ""))
            except ValueError:
                detail = response.text[:200]
            last_error = f"status {response.status_code}: {detail}"
            if 400 <= response.status_code < 500:
                raise BackendError(last_error)
            logger.warning("attempt %d/%d: %s", attempt + 1, self.retries, last_error)
        raise BackendError(f"failed after {self.retries} attempts: {last_error}")
