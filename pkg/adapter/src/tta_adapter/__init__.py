"""Reference external predictor speaking the TTA1 framed protocol.

Wraps an arbitrary user model function (an importable callable taking a
``(channels, nx, ny, nz)`` float32 array and returning ``(classes, nx, ny,
nz)`` probabilities) and serves it over stdin/stdout, one request at a
time.

Frame layout, byte-exact:

    magic "TTA1" | uint32-LE header length | UTF-8 JSON header | payload

The adapter sends a ``hello`` frame before reading anything, answers each
``predict`` frame with a ``probs`` frame (or an ``error`` frame), and keeps
serving after malformed input by rescanning the stream for the next magic.
Payloads are float32 little-endian, leading-axis-major with x fastest.

Configuration is a JSON document::

    {
      "entry_point": "package.module:callable",
      "init": {...},            # optional; entry point is then a factory
      "classes": 4,
      "channels": 1,
      "name": "my-model"
    }
"""

from __future__ import annotations

import importlib
import json
import struct
import sys

import numpy as np

__version__ = "0.1.0"

MAGIC = b"TTA1"
PROTOCOL_VERSION = 1
_LEN = struct.Struct("<I")
_MAX_HEADER = 1 << 20
_MAX_PAYLOAD = 1 << 33  # 8 GiB guards against nonsense dims

SUM_TOLERANCE = 1e-3


class _Eof(Exception):
    """Input ended cleanly (at or inside a frame)."""


class _Desync(Exception):
    """Frame boundary lost; the payload length cannot be determined."""


def load_config(path) -> dict:
    with open(path) as f:
        config = json.load(f)
    for key in ("entry_point", "classes", "channels"):
        if key not in config:
            raise ValueError(f"adapter config is missing {key!r}")
    if int(config["classes"]) < 2:
        raise ValueError("classes must be >= 2")
    if int(config["channels"]) < 1:
        raise ValueError("channels must be >= 1")
    return config


def load_model(config: dict):
    """Resolve the entry point; with ``init`` present it is a factory."""
    module_name, sep, attr = config["entry_point"].partition(":")
    if not sep or not attr:
        raise ValueError(
            f"entry_point must look like 'module:callable', "
            f"got {config['entry_point']!r}"
        )
    target = importlib.import_module(module_name)
    for part in attr.split("."):
        target = getattr(target, part)
    if "init" in config:
        target = target(**config["init"])
    if not callable(target):
        raise ValueError(f"entry point {config['entry_point']!r} is not callable")
    return target


def validate_probs(arr: np.ndarray) -> np.ndarray:
    """Sanitize model output before it goes on the wire.

    Negatives are clipped at 0; voxels whose class vector deviates from
    sum 1 by at most ``SUM_TOLERANCE`` are renormalized; larger deviations
    raise. Exact rows pass through value-unchanged.
    """
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 4:
        raise ValueError(f"expected (classes, nx, ny, nz) output, got {arr.shape}")
    arr = np.clip(arr, 0.0, None)
    sums = arr.sum(axis=0, dtype=np.float64)
    deviation = np.abs(sums - 1.0)
    worst = float(deviation.max())
    if worst > SUM_TOLERANCE:
        raise ValueError(
            f"model output deviates from sum 1 by {worst:.3g} "
            f"(tolerance {SUM_TOLERANCE})"
        )
    off = deviation > 0
    if off.any():
        arr[:, off] = (arr[:, off] / sums[off]).astype(np.float32)
    return arr


def encode_frame(header: dict, payload: bytes = b"") -> bytes:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + _LEN.pack(len(blob)) + blob + payload


def payload_to_array(payload: bytes, channels: int, dims) -> np.ndarray:
    nx, ny, nz = dims
    flat = np.frombuffer(payload, dtype="<f4")
    arr = flat.reshape((nx, ny, nz, channels), order="F").transpose(3, 0, 1, 2)
    return np.ascontiguousarray(arr)


def array_to_payload(arr: np.ndarray) -> bytes:
    le = np.asarray(arr, dtype="<f4")
    return le.transpose(1, 2, 3, 0).tobytes(order="F")


def _read_exact(stream, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = stream.read(n - got)
        if not chunk:
            raise _Eof
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def _read_frame(stream, skip_magic: bool = False):
    """Read one frame; raises _Desync when the boundary cannot be trusted."""
    if not skip_magic:
        magic = _read_exact(stream, 4)
        if magic != MAGIC:
            raise _Desync(f"bad frame magic {magic!r}")
    (hlen,) = _LEN.unpack(_read_exact(stream, 4))
    if hlen > _MAX_HEADER:
        raise _Desync(f"header length {hlen} exceeds limit")
    blob = _read_exact(stream, hlen)
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise _Desync(f"undecodable frame header: {exc}")
    if not isinstance(header, dict):
        raise _Desync("frame header is not a JSON object")

    kind = header.get("type")
    if kind in ("hello", "error"):
        return header, b""
    if kind == "predict":
        count = header.get("channels")
    elif kind == "probs":
        count = header.get("classes")
    else:
        raise _Desync(f"unknown frame type {kind!r}")
    dims = header.get("dims")
    if (not isinstance(dims, list) or len(dims) != 3
            or any(not isinstance(d, int) or d <= 0 for d in dims)):
        raise _Desync(f"bad dims {dims!r}")
    if not isinstance(count, int) or count <= 0:
        raise _Desync(f"bad axis count {count!r}")
    if header.get("dtype") != "f32le":
        raise _Desync(f"unsupported dtype {header.get('dtype')!r}")
    nbytes = count * dims[0] * dims[1] * dims[2] * 4
    if nbytes > _MAX_PAYLOAD:
        raise _Desync(f"payload of {nbytes} bytes exceeds limit")
    return header, _read_exact(stream, nbytes)


def _scan_to_magic(stream) -> bool:
    """Byte-wise scan until a frame magic appears; False on EOF."""
    window = b""
    while window != MAGIC:
        byte = stream.read(1)
        if not byte:
            return False
        window = (window + byte)[-4:]
    return True


def serve(config: dict, stdin=None, stdout=None) -> int:
    """Handshake, then answer predict frames until the input closes."""
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    model = load_model(config)
    classes = int(config["classes"])
    channels = int(config["channels"])
    name = str(config.get("name", config["entry_point"]))

    def send(frame: bytes) -> bool:
        try:
            stdout.write(frame)
            stdout.flush()
            return True
        except (BrokenPipeError, OSError):
            return False

    def send_error(message: str) -> bool:
        return send(encode_frame({"type": "error", "message": message}))

    if not send(encode_frame({
        "type": "hello", "protocol": PROTOCOL_VERSION,
        "classes": classes, "channels": channels, "name": name,
    })):
        return 0

    skip_magic = False
    while True:
        try:
            header, payload = _read_frame(stdin, skip_magic=skip_magic)
        except _Eof:
            return 0
        except _Desync as desync:
            if not send_error(f"malformed frame: {desync}"):
                return 0
            if not _scan_to_magic(stdin):
                return 0
            skip_magic = True
            continue
        skip_magic = False

        if header["type"] != "predict":
            send_error(f"unexpected frame type {header['type']!r}")
            continue
        if header["channels"] != channels:
            send_error(
                f"request has {header['channels']} channels, "
                f"model expects {channels}"
            )
            continue
        try:
            request = payload_to_array(payload, channels, header["dims"])
            probs = validate_probs(model(request))
        except Exception as exc:
            send_error(f"{type(exc).__name__}: {exc}")
            continue
        if probs.shape != (classes, *header["dims"]):
            send_error(
                f"model returned shape {probs.shape}, expected "
                f"{(classes, *header['dims'])}"
            )
            continue
        ok = send(encode_frame(
            {"type": "probs", "dims": header["dims"], "classes": classes,
             "dtype": "f32le"},
            array_to_payload(probs),
        ))
        if not ok:
            return 0
