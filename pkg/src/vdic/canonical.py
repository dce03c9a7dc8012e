"""Canonical JSON and strict binary encodings shared by every signed artifact."""

from __future__ import annotations

import base64
import json
from datetime import datetime, timezone
from typing import Any

import base58


class CanonicalizationError(ValueError):
    pass


def canonicalize(value: Any) -> bytes:
    """Serialize ``value`` to canonical JSON bytes.

    Object keys are sorted by code point, there is no insignificant
    whitespace, and output is UTF-8. Only integers are allowed as numbers.
    """
    _check(value)
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def _check(value: Any) -> None:
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return
    if isinstance(value, int):
        return
    if isinstance(value, float):
        raise CanonicalizationError(f"non-integer number: {value!r}")
    if isinstance(value, dict):
        for k, v in value.items():
            if not isinstance(k, str):
                raise CanonicalizationError(f"object key must be a string: {k!r}")
            _check(v)
        return
    if isinstance(value, (list, tuple)):
        for v in value:
            _check(v)
        return
    raise CanonicalizationError(f"unsupported type: {type(value).__name__}")


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


def loads_strict(data: bytes | str) -> Any:
    """Parse JSON, rejecting duplicate keys and floating point numbers."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")

    def no_float(s):
        raise ValueError(f"non-integer number: {s}")

    return json.loads(
        data,
        object_pairs_hook=_reject_duplicates,
        parse_float=no_float,
        parse_constant=no_float,
    )


def loads_canonical(data: bytes) -> Any:
    """Parse JSON that must already be in canonical form, byte for byte."""
    value = loads_strict(data)
    raw = data if isinstance(data, bytes) else data.encode("utf-8")
    if canonicalize(value) != raw:
        raise ValueError("input is not canonical JSON")
    return value


def b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64decode(text: str) -> bytes:
    """Standard padded base64; rejects any non-canonical spelling."""
    if not isinstance(text, str):
        raise ValueError("base64 value must be a string")
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise ValueError("invalid base64") from exc
    # unused trailing bits would otherwise let two strings decode alike
    if b64encode(raw) != text:
        raise ValueError("non-canonical base64")
    return raw


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    try:
        raw = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except Exception as exc:
        raise ValueError("invalid base64url") from exc
    if b64url_encode(raw) != text:
        raise ValueError("non-canonical base64url")
    return raw


def b58encode(data: bytes) -> str:
    return base58.b58encode(data).decode("ascii")


def b58decode(text: str) -> bytes:
    try:
        raw = base58.b58decode(text.encode("ascii"))
    except Exception as exc:
        raise ValueError("invalid base58") from exc
    if b58encode(raw) != text:
        raise ValueError("non-canonical base58")
    return raw


def utc_now() -> str:
    return format_timestamp(datetime.now(timezone.utc))


def format_timestamp(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> datetime:
    """Parse an RFC 3339 timestamp; naive values are rejected."""
    if not isinstance(text, str):
        raise ValueError("timestamp must be a string")
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        raise ValueError(f"timestamp lacks a UTC offset: {text}")
    return dt
