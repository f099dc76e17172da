"""Mask codecs and response shapes for the JSON-lines wire."""

from __future__ import annotations

import base64

import numpy as np


def encode_mask(mask: np.ndarray) -> str:
    """Row-major uint8 bytes, base64. Works on flat or 2-d arrays."""
    return base64.b64encode(
        np.ascontiguousarray(mask, dtype=np.uint8).tobytes()).decode("ascii")


def decode_mask(b64: str) -> np.ndarray:
    """Flat uint8 array; the caller owns the reshape."""
    return np.frombuffer(base64.b64decode(b64), dtype=np.uint8).copy()


def ok(req_id, **extra) -> dict:
    return {"id": req_id, "status": "ok", **extra}


def err(req_id, message: str) -> dict:
    return {"id": req_id, "status": "error", "message": str(message)}
