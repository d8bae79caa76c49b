"""Content-addressed response cache.

One file per (backend, primitive, instruction, text) quadruple, keyed by a
length-prefixed sha256 so field boundaries can never collide ("ab"+"c" vs
"a"+"bc"). Values are canonical JSON. Reads are lock-free; writes are
serialized and atomic (tempfile + rename) so concurrent workers may race on
the same key without corrupting it.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any


def cache_key(backend_id: str, primitive: str, instruction: str, text: str) -> str:
    if primitive not in ("label", "span"):
        raise ValueError(f"unknown primitive {primitive!r}")
    h = hashlib.sha256()
    for part in (backend_id, primitive, instruction, text):
        raw = part.encode("utf-8")
        h.update(len(raw).to_bytes(8, "big"))
        h.update(raw)
    return h.hexdigest()


class ResponseCache:
    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> dict[str, Any] | None:
        try:
            raw = self._path(key).read_text(encoding="utf-8")
        except OSError:
            return None
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            return None  # treat a torn/corrupt entry as a miss
        return value if isinstance(value, dict) else None

    def put(self, key: str, value: dict[str, Any]) -> None:
        payload = json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
        with self._write_lock:
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(payload)
                os.replace(tmp, self._path(key))
            except BaseException:
                try:
                    os.unlink(tmp)
                except OSError:
                    pass
                raise
