"""Judge and embedding clients.

The wire contract is deliberately minimal so any provider (or a local
mock) can serve it: POST JSON ``{"model": str, "prompt": str, "images":
[base64 PNG, ...]}``; the reply is ``{"text": str}`` for chat-style calls
and ``{"vector": [float, ...]}`` for embeddings. Credentials come from an
environment variable only, never from config values.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import time
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import requests
from PIL import Image

from .errors import ClientTransportError, UnparseableReplyError

logger = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "PATCHFORGE_API_KEY"


class VlmClient(Protocol):
    def complete(self, prompt: str, images: Sequence[np.ndarray]) -> str: ...


class EmbeddingClient(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


def encode_image_png_b64(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def request_digest(prompt: str, images: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256(prompt.encode("utf-8"))
    for img in images:
        h.update(b"\0")
        h.update(str(img.shape).encode("ascii"))
        h.update(np.ascontiguousarray(img).tobytes())
    return h.hexdigest()


class HttpVlmClient:
    """Chat-style client over the minimal wire contract, with bounded retries."""

    def __init__(self, endpoint: str, model: str, api_key_env: str = DEFAULT_API_KEY_ENV,
                 timeout: float = 60.0, max_retries: int = 3, backoff: float = 0.5):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, payload: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = requests.post(self.endpoint, data=json.dumps(payload),
                                     headers=self._headers(), timeout=self.timeout)
                if resp.status_code >= 500:
                    raise ClientTransportError(f"server error {resp.status_code}")
                if resp.status_code != 200:
                    raise ClientTransportError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
                return resp.json()
            except (requests.RequestException, ClientTransportError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.max_retries:
                    time.sleep(self.backoff * (2 ** attempt))
        raise ClientTransportError(f"request failed after {self.max_retries} attempts: {last_error}")

    def complete(self, prompt: str, images: Sequence[np.ndarray]) -> str:
        doc = self._post({
            "model": self.model,
            "prompt": prompt,
            "images": [encode_image_png_b64(img) for img in images],
        })
        if "text" not in doc:
            raise UnparseableReplyError(f"reply lacks 'text': {doc}")
        return doc["text"]


class HttpEmbeddingClient(HttpVlmClient):
    """Same wire contract; the reply carries a vector instead of text."""

    def embed(self, text: str) -> np.ndarray:
        doc = self._post({"model": self.model, "prompt": text, "images": []})
        if "vector" not in doc:
            raise UnparseableReplyError(f"reply lacks 'vector': {doc}")
        return np.asarray(doc["vector"], dtype=np.float64)


class RemotePerceptualScorer:
    """Adapter for an external perceptual-distance model over the same wire
    contract: two image attachments in, a bare decimal number back."""

    PROMPT = ("Return only the perceptual distance between the two attached "
              "images as a decimal number.")

    def __init__(self, client: VlmClient):
        self.client = client

    def __call__(self, original: np.ndarray, artifact: np.ndarray, patch_px: int) -> float:
        reply = self.client.complete(self.PROMPT, [original, artifact])
        try:
            return float(reply.strip())
        except ValueError as exc:
            raise UnparseableReplyError(f"expected a number, got {reply!r}") from exc


class MockVlmClient:
    """Deterministic stand-in for tests and offline runs.

    Answers with the reply of the first rule whose key occurs in the
    prompt, else the default.
    """

    def __init__(self, rules: Sequence[tuple[str, str]] = (), default: str = "Yes"):
        self.rules = [(str(k), str(v)) for k, v in rules]
        self.default = default
        self.calls: list[str] = []

    def complete(self, prompt: str, images: Sequence[np.ndarray]) -> str:
        self.calls.append(prompt)
        for key, reply in self.rules:
            if key in prompt:
                return reply
        return self.default


class MockEmbeddingClient:
    """Returns preset vectors keyed by exact text, else a hash-seeded vector."""

    def __init__(self, vectors: dict[str, Sequence[float]] | None = None, dim: int = 8):
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in (vectors or {}).items()}
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        if text in self.vectors:
            return self.vectors[text]
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        return np.random.default_rng(seed).standard_normal(self.dim)


class RecordingVlmClient:
    """Wraps a client and appends every exchange to a JSONL transcript."""

    def __init__(self, inner: VlmClient, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def complete(self, prompt: str, images: Sequence[np.ndarray]) -> str:
        reply = self.inner.complete(prompt, images)
        entry = {"digest": request_digest(prompt, images), "reply": reply}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
        return reply


class ReplayVlmClient:
    """Replays a recorded transcript; identical requests get identical replies."""

    def __init__(self, path: str | Path):
        self.queues: dict[str, list[str]] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                entry = json.loads(line)
                self.queues.setdefault(entry["digest"], []).append(entry["reply"])

    def complete(self, prompt: str, images: Sequence[np.ndarray]) -> str:
        digest = request_digest(prompt, images)
        queue = self.queues.get(digest)
        if not queue:
            raise ClientTransportError(f"no recorded reply for request {digest[:12]}…")
        return queue.pop(0)


def client_from_config(config: dict) -> VlmClient:
    """Build a client from the pipeline config's ``client`` section."""
    kind = config.get("kind", "mock")
    if kind == "http":
        return HttpVlmClient(
            endpoint=config["endpoint"],
            model=config.get("model", "default"),
            api_key_env=config.get("api_key_env", DEFAULT_API_KEY_ENV),
            timeout=config.get("timeout", 60.0),
            max_retries=config.get("max_retries", 3),
            backoff=config.get("backoff", 0.5),
        )
    if kind == "mock":
        return MockVlmClient(rules=[tuple(r) for r in config.get("rules", [])],
                             default=config.get("default", "Yes"))
    if kind == "replay":
        return ReplayVlmClient(config["transcript"])
    raise ValueError(f"unknown client kind {kind!r}")
