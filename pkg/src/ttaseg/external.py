"""Client side of the external-predictor protocol.

An :class:`ExternalPredictor` owns one child process and allows one
outstanding request at a time; :class:`ExternalPredictorPool` runs several
identical children and hands requests to whichever is free, which makes it
safe for concurrent use by the engine.
"""

from __future__ import annotations

import queue
import subprocess

import numpy as np

from .errors import (
    ChannelMismatchError,
    HandshakeError,
    MalformedPayloadError,
    PredictorProcessError,
    ProbValidationError,
    ProtocolVersionError,
    RemoteModelError,
)
from .volume import PROB_SUM_TOL, ProbMap, Volume, array_to_bytes, bytes_to_array
from .wire import PROTOCOL_VERSION, encode_frame, read_frame

DEFAULT_TIMEOUT = 300.0


def validate_response_probs(planes: np.ndarray) -> None:
    """Check ProbMap invariants, naming the first offending voxel.

    Voxels are scanned in the canonical layout order (x fastest).
    """
    bad = (planes < 0).any(axis=0)
    sums = planes.sum(axis=0, dtype=np.float64)
    bad |= np.abs(sums - 1.0) > PROB_SUM_TOL
    if bad.any():
        flat = np.flatnonzero(bad.ravel(order="F"))
        x, y, z = np.unravel_index(flat[0], bad.shape, order="F")
        raise ProbValidationError(
            f"voxel ({x}, {y}, {z}): class vector sums to "
            f"{sums[x, y, z]:.6f} (min prob {planes[:, x, y, z].min():.6f})"
        )


class ExternalPredictor:
    """A predictor running in a child process, one request at a time."""

    concurrent_safe = False

    def __init__(self, command, timeout: float = DEFAULT_TIMEOUT,
                 handshake_timeout: float = 60.0):
        self.command = list(command)
        self.timeout = float(timeout)
        try:
            # unbuffered pipes: reads must hit the raw fd, or select() on it
            # would stall on data already slurped into a reader buffer
            self._proc = subprocess.Popen(
                self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                bufsize=0,
            )
        except OSError as exc:
            raise PredictorProcessError(f"cannot launch {self.command}: {exc}") from exc
        # model startup (imports, checkpoint loads) is slower than requests
        hello, _ = self._read_frame(handshake_timeout)
        if hello.get("type") != "hello":
            raise HandshakeError(f"expected hello frame, got {hello.get('type')!r}")
        if hello.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolVersionError(
                f"child speaks protocol {hello.get('protocol')!r}, "
                f"need {PROTOCOL_VERSION}"
            )
        try:
            self.classes = int(hello["classes"])
            self.channels = int(hello["channels"])
        except (KeyError, TypeError, ValueError) as exc:
            raise HandshakeError(f"hello frame missing contract fields: {exc}") from exc
        self.name = str(hello.get("name", self.command[0]))
        if self.classes < 2:
            raise HandshakeError(f"declared {self.classes} classes, need >= 2")

    def _dead(self, consumed):
        # a partially transmitted frame is a truncation, not a plain death
        if consumed > 0:
            raise MalformedPayloadError(
                f"response truncated after {consumed} frame bytes"
            )
        try:
            code = self._proc.wait(timeout=0.5)
        except subprocess.TimeoutExpired:
            code = None
        if code is not None:
            raise PredictorProcessError(
                f"predictor process exited with code {code} before answering"
            )
        raise MalformedPayloadError("stream closed without a response")

    def _read_frame(self, timeout: float | None = None):
        timeout = self.timeout if timeout is None else timeout
        return read_frame(self._proc.stdout, timeout, on_eof=self._dead)

    def predict(self, v: Volume) -> ProbMap:
        if self._proc.poll() is not None:
            raise PredictorProcessError(
                f"predictor process already exited with code {self._proc.returncode}"
            )
        if v.channels != self.channels:
            raise ChannelMismatchError(
                f"predictor {self.name!r} expects {self.channels} channels, "
                f"volume has {v.channels}"
            )
        header = {
            "type": "predict",
            "dims": list(v.dims),
            "channels": v.channels,
            "spacing": list(v.spacing),
            "dtype": "f32le",
        }
        try:
            self._proc.stdin.write(encode_frame(header, array_to_bytes(v.data)))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise PredictorProcessError(f"predictor pipe closed: {exc}") from exc
        resp, payload = self._read_frame()
        kind = resp.get("type")
        if kind == "error":
            raise RemoteModelError(str(resp.get("message", "unspecified error")))
        if kind != "probs":
            raise MalformedPayloadError(f"expected probs frame, got {kind!r}")
        if tuple(resp.get("dims", ())) != v.dims:
            raise MalformedPayloadError(
                f"response dims {resp.get('dims')} do not match request {list(v.dims)}"
            )
        classes = int(resp.get("classes", 0))
        if classes != self.classes:
            raise MalformedPayloadError(
                f"response declares {classes} classes, handshake said {self.classes}"
            )
        planes = bytes_to_array(payload, classes, v.dims)
        validate_response_probs(planes)
        return ProbMap(planes, v.spacing)

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            if getattr(self, "_proc", None) is not None and self._proc.poll() is None:
                self._proc.kill()
        except Exception:
            pass


class ExternalPredictorPool:
    """Pool of identical external predictors; safe for concurrent callers.

    Requests are served by whichever child is idle; since every child runs
    the same deterministic model, results do not depend on the assignment.
    """

    concurrent_safe = True

    def __init__(self, command, size: int, timeout: float = DEFAULT_TIMEOUT):
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self._workers = []
        try:
            for _ in range(size):
                self._workers.append(ExternalPredictor(command, timeout))
        except Exception:
            self.close()
            raise
        first = self._workers[0]
        for w in self._workers[1:]:
            if (w.classes, w.channels, w.name) != (first.classes, first.channels, first.name):
                self.close()
                raise HandshakeError("pool children disagree on their contract")
        self.classes = first.classes
        self.channels = first.channels
        self.name = f"pool({first.name}, size={size})"
        self._idle: queue.Queue = queue.Queue()
        for w in self._workers:
            self._idle.put(w)

    def predict(self, v: Volume) -> ProbMap:
        worker = self._idle.get()
        try:
            return worker.predict(v)
        finally:
            self._idle.put(worker)

    def close(self) -> None:
        for w in self._workers:
            w.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
