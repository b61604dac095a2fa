"""Minimal JSON-over-HTTP client used by the remote scorer and embedder."""

from __future__ import annotations

import time
from typing import Any

import requests


def post_json(
    url: str,
    payload: dict,
    timeout: float = 30.0,
    retries: int = 3,
    backoff: float = 0.2,
) -> dict[str, Any]:
    """POST a JSON payload, retrying transient failures with backoff.

    Raises the last underlying exception once retries are exhausted;
    callers translate that into their own error code.
    """
    last_exc: Exception | None = None
    for attempt in range(retries):
        try:
            resp = requests.post(url, json=payload, timeout=timeout)
            resp.raise_for_status()
            body = resp.json()
            if not isinstance(body, dict):
                raise ValueError(f"expected JSON object from {url}, got {type(body).__name__}")
            return body
        except Exception as exc:  # noqa: BLE001 - uniform retry over network errors
            last_exc = exc
            if attempt + 1 < retries:
                time.sleep(backoff * (2**attempt))
    assert last_exc is not None
    raise last_exc
