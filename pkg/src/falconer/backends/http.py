"""Remote inference providers.

Two wire shapes: the proxy server's batched /v1/classify and /v1/extract, and
an OpenAI-compatible chat-completions endpoint used both by the planner and by
the LLM annotator backend. Retries cover transport failures and 5xx only
(3 attempts, exponential backoff from 250 ms); 4xx and malformed bodies are
protocol errors and fail immediately.
"""

from __future__ import annotations

import json
import logging
import os
import time
from typing import Any, Sequence

import requests

from ..errors import BackendUnavailable, ProtocolError
from .base import (
    Backend,
    BackendDescriptor,
    ClassifyItem,
    ClassifyResult,
    ExtractItem,
    RawSpan,
)
from .cache import ResponseCache

log = logging.getLogger(__name__)

RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 0.25


def post_json(
    url: str,
    body: dict[str, Any],
    *,
    api_key: str | None = None,
    timeout: float = 60.0,
    attempts: int = RETRY_ATTEMPTS,
    base_delay: float = RETRY_BASE_DELAY,
) -> dict[str, Any]:
    """POST with bounded retries; returns the decoded JSON object."""
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    last = "no attempt made"
    for attempt in range(attempts):
        if attempt:
            time.sleep(base_delay * (2 ** (attempt - 1)))
        try:
            resp = requests.post(url, json=body, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            last = f"transport error: {exc}"
            log.warning("POST %s attempt %d failed: %s", url, attempt + 1, last)
            continue
        if resp.status_code >= 500:
            last = f"server error {resp.status_code}"
            log.warning("POST %s attempt %d failed: %s", url, attempt + 1, last)
            continue
        if resp.status_code >= 400:
            raise ProtocolError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
        except ValueError:
            raise ProtocolError(f"{url} returned non-JSON body") from None
        if not isinstance(payload, dict):
            raise ProtocolError(f"{url} returned a non-object JSON body")
        return payload
    raise BackendUnavailable(f"{url} unreachable after {attempts} attempts ({last})")


class ChatCompletionsClient:
    """Minimal OpenAI-compatible chat client (temperature pinned to 0)."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 60.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get("FALCONER_API_KEY")
        self.timeout = timeout

    def complete(self, messages: list[dict[str, str]]) -> str:
        body = {"model": self.model, "messages": messages, "temperature": 0}
        payload = post_json(
            f"{self.base_url}/v1/chat/completions",
            body,
            api_key=self.api_key,
            timeout=self.timeout,
        )
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise ProtocolError("chat reply missing choices[0].message.content") from None
        if not isinstance(content, str):
            raise ProtocolError("chat reply content is not a string")
        return content


class HttpProxyBackend(Backend):
    """Talks to the proxy server's batched classify/extract endpoints."""

    def __init__(
        self,
        base_url: str,
        descriptor: BackendDescriptor | None = None,
        api_key: str | None = None,
        cache: ResponseCache | None = None,
        max_inflight: int = 8,
        timeout: float = 60.0,
    ):
        if descriptor is None:
            descriptor = BackendDescriptor(id="http_proxy", kind="http_proxy")
        super().__init__(descriptor, cache=cache, max_inflight=max_inflight)
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get("FALCONER_API_KEY")
        self.timeout = timeout

    def _classify_batch(self, items: Sequence[ClassifyItem]) -> list[ClassifyResult]:
        payload = post_json(
            f"{self.base_url}/v1/classify",
            {"items": [{"text": it.text, "label": it.label} for it in items]},
            api_key=self.api_key,
            timeout=self.timeout,
        )
        rows = payload.get("results")
        if not isinstance(rows, list) or len(rows) != len(items):
            raise ProtocolError("classify reply must carry one result per item")
        out = []
        for row in rows:
            if not isinstance(row, dict):
                raise ProtocolError("classify result must be an object")
            try:
                out.append(ClassifyResult(score=float(row["score"]), answer=row["answer"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ProtocolError(f"bad classify result {row!r}: {exc}") from None
        return out

    def _extract_batch(self, items: Sequence[ExtractItem]) -> list[list[RawSpan]]:
        payload = post_json(
            f"{self.base_url}/v1/extract",
            {"items": [{"text": it.text, "instruction": it.instruction} for it in items]},
            api_key=self.api_key,
            timeout=self.timeout,
        )
        rows = payload.get("results")
        if not isinstance(rows, list) or len(rows) != len(items):
            raise ProtocolError("extract reply must carry one result per item")
        out: list[list[RawSpan]] = []
        for row in rows:
            if not isinstance(row, dict) or not isinstance(row.get("spans"), list):
                raise ProtocolError(f"bad extract result {row!r}")
            spans: list[RawSpan] = []
            for s in row["spans"]:
                if not isinstance(s, dict):
                    raise ProtocolError(f"bad span entry {s!r}")
                spans.append((s.get("start"), s.get("end"), s.get("surface")))
            out.append(spans)
        return out


CLASSIFY_SYSTEM = (
    'You label texts. Reply with strict JSON, exactly {"answer": "yes"} or {"answer": "no"}.'
)
EXTRACT_SYSTEM = (
    "You extract spans. Reply with strict JSON, exactly "
    '{"spans": [{"start": <int>, "end": <int>}]} using character offsets into the text; '
    'use {"spans": []} when nothing matches.'
)


class LlmAnnotatorBackend(Backend):
    """Chat-LLM annotator: one request per item, strict-JSON replies."""

    def __init__(
        self,
        client: ChatCompletionsClient,
        descriptor: BackendDescriptor | None = None,
        cache: ResponseCache | None = None,
        max_inflight: int = 8,
    ):
        if descriptor is None:
            descriptor = BackendDescriptor(id="llm_annotator", kind="llm_annotator", max_batch=1)
        super().__init__(descriptor, cache=cache, max_inflight=max_inflight)
        self.client = client

    @staticmethod
    def _reply_json(content: str) -> dict[str, Any]:
        decoder = json.JSONDecoder()
        idx = content.find("{")
        while idx >= 0:
            try:
                obj, _ = decoder.raw_decode(content, idx)
            except json.JSONDecodeError:
                idx = content.find("{", idx + 1)
                continue
            if isinstance(obj, dict):
                return obj
            idx = content.find("{", idx + 1)
        raise ProtocolError(f"no JSON object in annotator reply: {content[:120]!r}")

    def _classify_batch(self, items: Sequence[ClassifyItem]) -> list[ClassifyResult]:
        out = []
        for item in items:
            user = f"Text:\n{item.text}\n\nIs this text about {item.label}?"
            reply = self._reply_json(
                self.client.complete(
                    [
                        {"role": "system", "content": CLASSIFY_SYSTEM},
                        {"role": "user", "content": user},
                    ]
                )
            )
            answer = reply.get("answer")
            if answer not in ("yes", "no"):
                raise ProtocolError(f"annotator answer must be yes|no, got {answer!r}")
            out.append(ClassifyResult.from_score(1.0 if answer == "yes" else 0.0))
        return out

    def _extract_batch(self, items: Sequence[ExtractItem]) -> list[list[RawSpan]]:
        out: list[list[RawSpan]] = []
        for item in items:
            user = f"Text:\n{item.text}\n\nInstruction: {item.instruction}"
            reply = self._reply_json(
                self.client.complete(
                    [
                        {"role": "system", "content": EXTRACT_SYSTEM},
                        {"role": "user", "content": user},
                    ]
                )
            )
            spans_raw = reply.get("spans")
            if not isinstance(spans_raw, list):
                raise ProtocolError("annotator extract reply missing spans list")
            spans: list[RawSpan] = []
            for s in spans_raw:
                if not isinstance(s, dict):
                    continue
                start, end, surface = s.get("start"), s.get("end"), s.get("surface")
                # Re-anchor a mispointed surface by exact search; base-layer
                # validation drops whatever still disagrees (out-of-bounds
                # offsets are rejected, never repaired).
                if (
                    isinstance(surface, str)
                    and isinstance(start, int)
                    and isinstance(end, int)
                    and item.text[start:end] != surface
                ):
                    found = item.text.find(surface)
                    if found >= 0:
                        start, end = found, found + len(surface)
                spans.append((start, end, surface))
            out.append(spans)
        return out
