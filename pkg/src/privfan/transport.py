"""Edge -> cloud transfer of layered streams over TCP.

Each stream travels as one frame: a little-endian u32 byte count followed by
the container bytes, unchanged. Several frames may share a connection.
"""

from __future__ import annotations

import logging
import os
import socket
import struct
import tempfile
from pathlib import Path

from privfan.errors import PrivfanError

log = logging.getLogger(__name__)

_LEN = struct.Struct("<I")
MAX_FRAME = 0xFFFFFFFF


class FrameError(PrivfanError, ValueError):
    pass


class PartialFrameError(FrameError):
    """The peer closed the connection in the middle of a frame."""


def _recv_exact(sock: socket.socket, n: int, at_boundary: bool = False) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 16))
        if not chunk:
            if at_boundary and not buf:
                return None
            raise PartialFrameError(f"connection closed after {len(buf)} of {n} bytes")
        buf.extend(chunk)
    return bytes(buf)


def encode_frame(payload: bytes) -> bytes:
    if not payload:
        raise FrameError("refusing to send a zero-length stream")
    if len(payload) > MAX_FRAME:
        raise FrameError("stream too large for a single frame")
    return _LEN.pack(len(payload)) + payload


def receive_frames(sock: socket.socket):
    """Yield frame payloads until the peer closes the connection cleanly."""
    while True:
        head = _recv_exact(sock, _LEN.size, at_boundary=True)
        if head is None:
            return
        (n,) = _LEN.unpack(head)
        if n == 0:
            raise FrameError("zero-length frame")
        yield _recv_exact(sock, n)


def send_streams(host: str, port: int, payloads, timeout: float = 30.0) -> int:
    frames = [encode_frame(bytes(p)) for p in payloads]
    with socket.create_connection((host, port), timeout=timeout) as sock:
        for frame in frames:
            sock.sendall(frame)
    return len(frames)


def send_files(host: str, port: int, paths, timeout: float = 30.0) -> int:
    return send_streams(host, port, [Path(p).read_bytes() for p in paths], timeout)


def _write_atomic(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".incoming-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


class StreamServer:
    """Receive framed streams and store each as ``stream_NNNN.pfan`` in ``out_dir``.

    Only complete frames reach the disk; a connection that drops mid-frame is
    logged and its partial frame discarded.
    """

    def __init__(self, out_dir, host: str = "127.0.0.1", port: int = 0):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.sock = socket.create_server((host, port))
        self.port = self.sock.getsockname()[1]
        self.received: list[Path] = []
        self.errors: list[Exception] = []

    def handle(self, conn: socket.socket) -> None:
        with conn:
            try:
                for payload in receive_frames(conn):
                    path = self.out_dir / f"stream_{len(self.received):04d}.pfan"
                    _write_atomic(path, payload)
                    self.received.append(path)
                    log.info("received %d bytes -> %s", len(payload), path)
            except FrameError as exc:
                log.warning("dropped connection: %s", exc)
                self.errors.append(exc)

    def serve(self, max_connections: int | None = None) -> None:
        handled = 0
        while max_connections is None or handled < max_connections:
            try:
                conn, _ = self.sock.accept()
            except OSError:
                break
            self.handle(conn)
            handled += 1

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
