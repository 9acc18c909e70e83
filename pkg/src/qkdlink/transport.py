"""Byte transports carrying service-channel frames between the two engines.

Two deployments: an in-process loopback (deterministic FIFO with optional
fixed latency on a simulated clock) and a stream socket for running the
engines in separate processes.  Both expose the same small endpoint
surface: ``write``, ``read``, ``close``.
"""

from __future__ import annotations

import socket as socket_mod
from collections import deque
from dataclasses import dataclass, field

from .errors import TransportError
from .framing import FrameDecoder, MessageType, encode_frame


@dataclass
class SimClock:
    """Simulated wall clock shared by a loopback pair."""

    now: float = 0.0

    def advance(self, dt: float) -> None:
        if dt < 0:
            raise TransportError(f"cannot move the clock backwards by {dt}")
        self.now += dt


@dataclass
class _Queue:
    chunks: deque = field(default_factory=deque)
    closed: bool = False


class LoopbackEndpoint:
    """One side of an in-process FIFO pair."""

    def __init__(self, outbound: _Queue, inbound: _Queue, clock: SimClock, latency_s: float):
        self._out = outbound
        self._in = inbound
        self.clock = clock
        self.latency_s = latency_s

    def write(self, data: bytes) -> None:
        if self._out.closed or self._in.closed:
            raise TransportError("endpoint is closed")
        self._out.chunks.append((self.clock.now + self.latency_s, bytes(data)))

    def read(self, max_bytes: int = 1 << 20) -> bytes:
        """Return whatever has arrived by the current simulated time."""
        got = bytearray()
        while self._in.chunks and len(got) < max_bytes:
            ready, chunk = self._in.chunks[0]
            if ready > self.clock.now:
                break
            got.extend(chunk)
            self._in.chunks.popleft()
        if not got and self._in.closed:
            raise TransportError("peer closed the connection")
        return bytes(got)

    def close(self) -> None:
        self._out.closed = True
        self._in.closed = True

    @property
    def pending(self) -> bool:
        return bool(self._in.chunks) and self._in.chunks[0][0] <= self.clock.now


class SocketEndpoint:
    """Stream-socket endpoint with a receive timeout."""

    def __init__(self, sock: socket_mod.socket, timeout_s: float = 10.0):
        self._sock = sock
        self._sock.settimeout(timeout_s)

    def write(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def read(self, max_bytes: int = 1 << 20) -> bytes:
        try:
            chunk = self._sock.recv(max_bytes)
        except socket_mod.timeout as exc:
            raise TransportError("receive timed out") from exc
        except OSError as exc:
            raise TransportError(f"receive failed: {exc}") from exc
        if not chunk:
            raise TransportError("peer closed the connection")
        return chunk

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class RecordingEndpoint:
    """Endpoint wrapper that keeps a copy of every byte written through it.

    The accumulated ``sent`` buffer is the byte-exact transcript of one
    direction of the dialogue, ready to be dumped or hashed.
    """

    def __init__(self, inner):
        self.inner = inner
        self.sent = bytearray()

    def write(self, data: bytes) -> None:
        self.sent.extend(data)
        self.inner.write(data)

    def read(self, max_bytes: int = 1 << 20) -> bytes:
        return self.inner.read(max_bytes)

    def close(self) -> None:
        self.inner.close()


def transport_pair(kind="loopback", latency_s: float = 0.0):
    """Create two connected endpoints.

    ``kind`` is "loopback", "socket" (an anonymous in-process socket pair),
    or ("socket", host, port) to bind, connect, and accept on a real
    address within this process.
    """
    if kind == "loopback":
        clock = SimClock()
        ab, ba = _Queue(), _Queue()
        return (
            LoopbackEndpoint(ab, ba, clock, latency_s),
            LoopbackEndpoint(ba, ab, clock, latency_s),
        )
    if kind == "socket":
        kind = ("socket", "127.0.0.1", 0)
    if isinstance(kind, tuple) and len(kind) == 3 and kind[0] == "socket":
        _, host, port = kind
        try:
            listener = socket_mod.create_server((host, port))
            port = listener.getsockname()[1]
            client = socket_mod.create_connection((host, port), timeout=5.0)
            server, _ = listener.accept()
            listener.close()
        except OSError as exc:
            raise TransportError(f"socket setup failed: {exc}") from exc
        return SocketEndpoint(server), SocketEndpoint(client)
    raise TransportError(f"unknown transport kind {kind!r}")


class FrameChannel:
    """Frame-level send/receive on top of a byte endpoint."""

    def __init__(self, endpoint, auth_key: bytes | None = None):
        self.endpoint = endpoint
        self._decoder = FrameDecoder(auth_key=auth_key)
        self._auth_key = auth_key
        self._ready: deque = deque()
        self.bytes_sent = 0
        self.frames_sent = 0

    def send(self, msg_type: MessageType, payload: bytes = b"") -> None:
        frame = encode_frame(msg_type, payload, auth_key=self._auth_key)
        self.endpoint.write(frame)
        self.bytes_sent += len(frame)
        self.frames_sent += 1

    def poll(self) -> list[tuple[MessageType, bytes]]:
        """Read once without blocking semantics and return decoded frames."""
        data = self.endpoint.read()
        frames = self._decoder.feed(data) if data else []
        self._ready.extend(frames)
        out = list(self._ready)
        self._ready.clear()
        return out

    def recv(self, max_reads: int = 1024) -> tuple[MessageType, bytes]:
        """Return the next frame, reading as many times as needed."""
        if self._ready:
            return self._ready.popleft()
        for _ in range(max_reads):
            data = self.endpoint.read()
            if data:
                self._ready.extend(self._decoder.feed(data))
                if self._ready:
                    return self._ready.popleft()
        raise TransportError("no complete frame arrived")

    def close(self) -> None:
        self.endpoint.close()

    @property
    def frames_received(self) -> int:
        return self._decoder.frames_decoded
