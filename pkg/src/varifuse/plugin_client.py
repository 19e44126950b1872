"""Client side of the PNP1 external-denoiser protocol.

A plugin is any executable that loops over framed requests on stdin and
writes one framed response per request to stdout, using stderr only for
diagnostics. Frame layout (integers little-endian)::

    offset 0  4 bytes  magic "PNP1"
    offset 4  4 bytes  u32 header length H
    offset 8  H bytes  UTF-8 JSON {"width", "height", "bands", "sigma"}
    offset 8+H         width*height*bands float32 samples, band-sequential,
                       row-major within each band

The response uses the identical framing and must echo the request geometry.
The child is spawned once per handle and kept alive across calls; calls on
one handle are serialized. Any protocol violation, crash, or timeout raises
:class:`~varifuse.errors.PluginError` carrying the captured stderr output.
There is no silent fallback.
"""

from __future__ import annotations

import collections
import json
import os
import selectors
import shlex
import struct
import subprocess
import threading
import time

import numpy as np

from .errors import PluginError

__all__ = ["ExternalDenoiser", "pack_frame", "unpack_header"]

_MAGIC = b"PNP1"


def pack_frame(arr: np.ndarray, sigma: float) -> bytes:
    """Encode a (bands, height, width) float array as one PNP1 frame."""
    bands, height, width = arr.shape
    header = json.dumps(
        {"width": width, "height": height, "bands": bands, "sigma": float(sigma)},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    return _MAGIC + struct.pack("<I", len(header)) + header + arr.astype("<f4").tobytes()


def unpack_header(blob: bytes) -> dict:
    if blob[:4] != _MAGIC:
        raise PluginError(f"bad response magic {blob[:4]!r}, expected {_MAGIC!r}")
    (hlen,) = struct.unpack("<I", blob[4:8])
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PluginError(f"response header is not valid JSON: {exc}") from exc
    return header


class ExternalDenoiser:
    """Owns one plugin child process and speaks PNP1 over its pipes."""

    def __init__(self, command: str | list[str], timeout: float = 30.0):
        if isinstance(command, str):
            command = shlex.split(command)
        if not command:
            raise PluginError("external denoiser command is empty")
        self.command = list(command)
        self.timeout = float(timeout)
        self._proc: subprocess.Popen | None = None
        self._drain: threading.Thread | None = None
        self._stderr_tail: collections.deque[bytes] = collections.deque(maxlen=200)
        self._lock = threading.Lock()

    # -- process lifecycle ------------------------------------------------

    def _ensure_started(self):
        if self._proc is not None and self._proc.poll() is None:
            return
        self._stderr_tail = collections.deque(maxlen=200)
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                bufsize=0,
            )
        except OSError as exc:
            raise PluginError(f"failed to spawn plugin {self.command!r}: {exc}") from exc
        os.set_blocking(self._proc.stdout.fileno(), False)
        os.set_blocking(self._proc.stdin.fileno(), False)
        self._drain = threading.Thread(target=self._drain_stderr, args=(self._proc,), daemon=True)
        self._drain.start()

    def _drain_stderr(self, proc: subprocess.Popen):
        for line in iter(proc.stderr.readline, b""):
            self._stderr_tail.append(line)

    def diagnostics(self) -> str:
        return b"".join(self._stderr_tail).decode("utf-8", errors="replace")

    def close(self):
        """Ask the child to exit by closing its stdin; kill it if it lingers."""
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            if proc.stdin and not proc.stdin.closed:
                proc.stdin.close()
            proc.wait(timeout=2.0)
        except (OSError, subprocess.TimeoutExpired):
            proc.kill()
            proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    # -- framed I/O with deadline -----------------------------------------

    def _fail(self, message: str) -> PluginError:
        proc, self._proc = self._proc, None
        if proc is not None:
            proc.kill()
            proc.wait()
        if self._drain is not None:
            self._drain.join(timeout=0.5)
        return PluginError(message, diagnostics=self.diagnostics())

    def _write_all(self, data: bytes, deadline: float):
        fd = self._proc.stdin.fileno()
        sel = selectors.DefaultSelector()
        sel.register(fd, selectors.EVENT_WRITE)
        view = memoryview(data)
        try:
            while view:
                budget = deadline - time.monotonic()
                if budget <= 0:
                    raise self._fail(f"plugin did not accept request within {self.timeout}s")
                if not sel.select(budget):
                    continue
                try:
                    n = os.write(fd, view[:65536])
                except BlockingIOError:
                    continue
                except BrokenPipeError:
                    raise self._fail("plugin closed its input mid-request") from None
                view = view[n:]
        finally:
            sel.close()

    def _read_exact(self, count: int, deadline: float, what: str) -> bytes:
        fd = self._proc.stdout.fileno()
        sel = selectors.DefaultSelector()
        sel.register(fd, selectors.EVENT_READ)
        chunks, have = [], 0
        try:
            while have < count:
                budget = deadline - time.monotonic()
                if budget <= 0:
                    raise self._fail(f"plugin response timed out after {self.timeout}s while reading {what}")
                if not sel.select(budget):
                    continue
                try:
                    chunk = os.read(fd, min(1 << 20, count - have))
                except BlockingIOError:
                    continue
                if chunk == b"":
                    raise self._fail(
                        f"plugin closed its output after {have} of {count} bytes of {what}"
                    )
                chunks.append(chunk)
                have += len(chunk)
        finally:
            sel.close()
        return b"".join(chunks)

    # -- the one public operation -----------------------------------------

    def denoise(self, arr: np.ndarray, sigma: float) -> np.ndarray:
        """Round-trip one (bands, height, width) array through the plugin."""
        with self._lock:
            self._ensure_started()
            bands, height, width = arr.shape
            deadline = time.monotonic() + self.timeout
            self._write_all(pack_frame(arr, sigma), deadline)

            head = self._read_exact(8, deadline, "frame header")
            if head[:4] != _MAGIC:
                raise self._fail(f"bad response magic {head[:4]!r}, expected {_MAGIC!r}")
            (hlen,) = struct.unpack("<I", head[4:8])
            if hlen > 1 << 20:
                raise self._fail(f"implausible response header length {hlen}")
            hraw = self._read_exact(hlen, deadline, "JSON header")
            try:
                header = json.loads(hraw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise self._fail(f"response header is not valid JSON: {exc}") from exc
            got = (header.get("width"), header.get("height"), header.get("bands"))
            if got != (width, height, bands):
                raise self._fail(
                    f"response geometry {got} does not match request {(width, height, bands)}"
                )
            payload = self._read_exact(width * height * bands * 4, deadline, "payload")
            out = np.frombuffer(payload, dtype="<f4").astype(np.float64)
            return out.reshape(bands, height, width)
