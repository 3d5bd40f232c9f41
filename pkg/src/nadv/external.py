"""Client side of the external-classifier wire protocol.

Newline-delimited JSON over the child's stdin/stdout:

    tool -> clf   {"type": "hello", "input_dim": m, "num_classes": k}
    clf  -> tool  {"type": "ready", "input_dim": m, "num_classes": k}
    tool -> clf   {"type": "query", "id": n, "instances": [[...], ...]}
    clf  -> tool  {"type": "labels", "id": n, "labels": [...]}

Labels only, no probabilities or gradients. Responses must echo the request
id and arrive in request order. stderr is drained on a side thread and its
tail is attached to error messages.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
from collections import deque

import numpy as np

from .errors import HandshakeError, TransportError

_EOF = object()


class ExternalClassifier:
    """Owns one child process; classify() serializes callers."""

    def __init__(self, command: str, input_dim: int, num_classes: int,
                 timeout: float = 30.0):
        self.command = command
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.timeout = timeout
        self._lock = threading.Lock()
        self._next_id = 0
        self._stderr_tail: deque[str] = deque(maxlen=50)
        try:
            self._proc = subprocess.Popen(
                shlex.split(command), stdin=subprocess.PIPE,
                stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                text=True, bufsize=1)
        except OSError as e:
            raise TransportError(f"could not launch {command!r}: {e}") from e
        self._lines: queue.Queue = queue.Queue()
        self._stdout_thread = threading.Thread(target=self._read_stdout,
                                               daemon=True)
        self._stderr_thread = threading.Thread(target=self._read_stderr,
                                               daemon=True)
        self._stdout_thread.start()
        self._stderr_thread.start()
        self._handshake()

    def _read_stdout(self) -> None:
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(_EOF)

    def _read_stderr(self) -> None:
        for line in self._proc.stderr:
            self._stderr_tail.append(line.rstrip("\n"))

    def _diagnostics(self) -> str:
        code = self._proc.poll()
        state = "still running" if code is None else f"exited with code {code}"
        tail = "\n".join(self._stderr_tail) or "<empty>"
        return f"process {state}; stderr tail:\n{tail}"

    def _send(self, obj: dict) -> None:
        try:
            self._proc.stdin.write(json.dumps(obj) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise TransportError(
                f"write to classifier process failed: {e}; "
                f"{self._diagnostics()}"
            ) from e

    def _recv(self) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(
                f"no response within {self.timeout}s; {self._diagnostics()}"
            ) from None
        if line is _EOF:
            raise TransportError(
                f"classifier closed its output stream; {self._diagnostics()}"
            )
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as e:
            raise TransportError(
                f"classifier sent invalid JSON ({e}): {line!r}"
            ) from e
        if not isinstance(msg, dict):
            raise TransportError(f"classifier sent a non-object: {line!r}")
        return msg

    def _handshake(self) -> None:
        self._send({"type": "hello", "input_dim": self.input_dim,
                    "num_classes": self.num_classes})
        try:
            msg = self._recv()
        except TransportError as e:
            raise HandshakeError(str(e)) from e
        if msg.get("type") != "ready":
            raise HandshakeError(
                f"expected a ready message, got {msg!r}"
            )
        got_m, got_k = msg.get("input_dim"), msg.get("num_classes")
        if got_m != self.input_dim or got_k != self.num_classes:
            raise HandshakeError(
                f"classifier serves input_dim={got_m}, "
                f"num_classes={got_k}; expected input_dim={self.input_dim}, "
                f"num_classes={self.num_classes}"
            )

    def classify(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        with self._lock:
            qid = self._next_id
            self._next_id += 1
            self._send({"type": "query", "id": qid,
                        "instances": batch.tolist()})
            msg = self._recv()
        if msg.get("type") != "labels" or msg.get("id") != qid:
            raise TransportError(
                f"expected labels for id {qid}, got {msg!r}"
            )
        labels = msg.get("labels")
        if not isinstance(labels, list) or len(labels) != batch.shape[0]:
            raise TransportError(
                f"classifier returned {len(labels) if isinstance(labels, list) else 'no'} "
                f"labels for {batch.shape[0]} instances"
            )
        out = np.asarray(labels, dtype=np.int64)
        if out.size and (out.min() < 0 or out.max() >= self.num_classes):
            raise TransportError(
                f"classifier returned labels outside [0, {self.num_classes})"
            )
        return out

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        self._stdout_thread.join(timeout=2.0)
        self._stderr_thread.join(timeout=2.0)
