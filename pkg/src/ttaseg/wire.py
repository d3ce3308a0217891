"""Framed binary protocol for out-of-process predictors.

Frame layout (bit-exact):

    magic  "TTA1"                     4 bytes
    header length                     uint32 little-endian
    header                            UTF-8 JSON
    payload                           raw bytes, length derived from header

Header types and payloads:

* ``hello``:   ``{"type":"hello","protocol":1,"classes":k,"channels":c,"name":...}``
  (no payload; sent once by the child before reading anything)
* ``predict``: ``{"type":"predict","dims":[nx,ny,nz],"channels":c,
  "spacing":[sx,sy,sz],"dtype":"f32le"}`` followed by channel-major,
  x-fastest float32 little-endian voxels
* ``probs``:   ``{"type":"probs","dims":[...],"classes":k,"dtype":"f32le"}``
  followed by class-major float32 little-endian probabilities
* ``error``:   ``{"type":"error","message":...}`` (no payload)
"""

from __future__ import annotations

import json
import select
import struct
import time

from .errors import MalformedPayloadError

MAGIC = b"TTA1"
PROTOCOL_VERSION = 1

_LEN = struct.Struct("<I")
_MAX_HEADER = 1 << 20


def payload_nbytes(header: dict) -> int:
    """Payload size implied by a frame header."""
    kind = header.get("type")
    if kind in ("hello", "error"):
        return 0
    if kind == "predict":
        n = header["channels"]
    elif kind == "probs":
        n = header["classes"]
    else:
        raise MalformedPayloadError(f"unknown frame type {kind!r}")
    nx, ny, nz = header["dims"]
    if header.get("dtype") != "f32le":
        raise MalformedPayloadError(f"unsupported dtype {header.get('dtype')!r}")
    return int(n) * int(nx) * int(ny) * int(nz) * 4


def encode_frame(header: dict, payload: bytes = b"") -> bytes:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + _LEN.pack(len(blob)) + blob + payload


class _EarlyEof(Exception):
    """Internal: the stream ended inside a frame; carries bytes read so far."""

    def __init__(self, got: int):
        super().__init__(f"eof after {got} bytes")
        self.got = got


def _read_exact(stream, n: int, deadline) -> bytes:
    """Read exactly n bytes from a pipe, honoring an absolute deadline.

    A ``deadline`` of None blocks indefinitely. Raises _EarlyEof on stream
    end and PredictorTimeoutError when the deadline passes.
    """
    from .errors import PredictorTimeoutError

    chunks = []
    got = 0
    fd = stream.fileno() if deadline is not None else None
    while got < n:
        if deadline is not None:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise PredictorTimeoutError(f"timed out reading {n} bytes")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise PredictorTimeoutError(f"timed out reading {n} bytes")
        chunk = stream.read(n - got)
        if not chunk:
            raise _EarlyEof(got)
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(stream, timeout: float | None = None, on_eof=None):
    """Read one frame; returns (header dict, payload bytes).

    ``on_eof(consumed)`` is called (and must raise) when the stream ends
    with ``consumed`` bytes of the frame already read; the default raises
    MalformedPayloadError. Framing violations raise MalformedPayloadError;
    a passed deadline raises PredictorTimeoutError.
    """
    if on_eof is None:
        def on_eof(consumed):
            raise MalformedPayloadError(f"stream ended after {consumed} frame bytes")

    deadline = time.monotonic() + timeout if timeout is not None else None
    consumed = 0
    try:
        magic = _read_exact(stream, 4, deadline)
        consumed += 4
        if magic != MAGIC:
            raise MalformedPayloadError(f"bad frame magic {magic!r}")
        blob = _read_exact(stream, 4, deadline)
        consumed += 4
        (hlen,) = _LEN.unpack(blob)
        if hlen > _MAX_HEADER:
            raise MalformedPayloadError(f"header length {hlen} exceeds limit")
        blob = _read_exact(stream, hlen, deadline)
        consumed += hlen
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedPayloadError(f"undecodable frame header: {exc}") from exc
        if not isinstance(header, dict):
            raise MalformedPayloadError("frame header is not a JSON object")
        nbytes = payload_nbytes(header)
        payload = _read_exact(stream, nbytes, deadline) if nbytes else b""
    except _EarlyEof as eof:
        on_eof(consumed + eof.got)
        raise MalformedPayloadError("stream ended mid-frame")  # on_eof must raise
    return header, payload
