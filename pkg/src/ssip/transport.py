"""Framed, counted two-party message channels.

Every frame carries a fixed little-endian header::

    session_id (8) | bin_id u32 | j u32 | msg_type u16 | payload_len u32

followed by the payload. Channels keep per-phase byte, frame and round
counts plus a running SHA-256 over the transcript, so two runs can be
compared by digest alone.
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
import queue
import socket
import struct
import time
from abc import ABC, abstractmethod
from collections import Counter, deque
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from enum import IntEnum

HEADER = struct.Struct("<8sIIHI")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = (1 << 32) - 1
DEFAULT_ADDR = "127.0.0.1:7700"
ADDR_ENV = "SSIP_ADDR"

UP = "up"  # client to server
DOWN = "down"


class MsgType(IntEnum):
    SESSION_HEADER = 1
    PUBLIC_KEY = 2
    OFFLINE_PACKAGE = 3
    CLIENT_HEADER = 4
    MEMBERSHIP_CT = 5
    VALUE_CT = 6
    PIR_QUERY = 7
    PIR_ANSWER = 8
    OT_MSG1 = 9
    OT_MSG2 = 10
    OT_MSG3 = 11
    REVEAL = 12
    ABORT = 13


class TransportError(ConnectionError):
    pass


class ChannelClosed(TransportError):
    pass


class FrameTypeMismatch(TransportError):
    pass


class FrameTooLarge(TransportError):
    pass


@dataclass(frozen=True)
class Frame:
    session_id: bytes
    bin_id: int
    j: int
    msg_type: MsgType
    payload: bytes = b""

    @property
    def tag(self) -> tuple[int, int]:
        return (self.bin_id, self.j)

    def to_bytes(self) -> bytes:
        if len(self.payload) > MAX_PAYLOAD:
            raise FrameTooLarge(f"payload of {len(self.payload)} bytes exceeds u32 length")
        head = HEADER.pack(self.session_id, self.bin_id, self.j, int(self.msg_type), len(self.payload))
        return head + self.payload

    @classmethod
    def parse_header(cls, head: bytes) -> tuple[bytes, int, int, MsgType, int]:
        sid, bin_id, j, kind, length = HEADER.unpack(head)
        try:
            kind = MsgType(kind)
        except ValueError:
            raise TransportError(f"unregistered message type {kind}") from None
        return sid, bin_id, j, kind, length

    @classmethod
    def from_bytes(cls, data: bytes) -> Frame:
        sid, bin_id, j, kind, length = cls.parse_header(data[:HEADER_SIZE])
        payload = bytes(data[HEADER_SIZE:])
        if len(payload) != length:
            raise TransportError(f"payload length {len(payload)} but header says {length}")
        return cls(sid, bin_id, j, kind, payload)

    @property
    def size(self) -> int:
        return HEADER_SIZE + len(self.payload)


@dataclass
class PhaseMetrics:
    bytes_up: int = 0
    bytes_down: int = 0
    frames: int = 0
    rounds: int = 0
    millis: float = 0.0

    @property
    def total_bytes(self) -> int:
        return self.bytes_up + self.bytes_down

    def __iadd__(self, other: PhaseMetrics) -> PhaseMetrics:
        self.bytes_up += other.bytes_up
        self.bytes_down += other.bytes_down
        self.frames += other.frames
        self.rounds += other.rounds
        self.millis += other.millis
        return self


CSV_COLUMNS = ("session_id", "phase", "bytes_up", "bytes_down", "frames", "rounds", "millis")


class TranscriptMetrics:
    """Per-phase counters and a digest of every frame in wire order.

    A round begins whenever the direction of traffic flips, so a strictly
    alternating exchange of ``r`` messages counts ``r`` rounds.
    """

    def __init__(self) -> None:
        self.phases: dict[str, PhaseMetrics] = {}
        self.current = "setup"
        self._last_direction: str | None = None
        self._hash = hashlib.sha256()
        self._phase_start = time.perf_counter()

    def record(self, direction: str, frame_bytes: bytes) -> None:
        pm = self.phases.setdefault(self.current, PhaseMetrics())
        if direction == UP:
            pm.bytes_up += len(frame_bytes)
        else:
            pm.bytes_down += len(frame_bytes)
        pm.frames += 1
        if direction != self._last_direction:
            pm.rounds += 1
            self._last_direction = direction
        self._hash.update((b"U" if direction == UP else b"D") + frame_bytes)

    def set_phase(self, name: str) -> None:
        now = time.perf_counter()
        self.phases.setdefault(self.current, PhaseMetrics()).millis += (now - self._phase_start) * 1e3
        self.current = name
        self._phase_start = now
        self.phases.setdefault(name, PhaseMetrics())

    def finish(self) -> None:
        self.set_phase(self.current)

    @property
    def digest(self) -> str:
        return self._hash.hexdigest()

    def total(self, include=None) -> PhaseMetrics:
        out = PhaseMetrics()
        for name, pm in self.phases.items():
            if include is None or name in include:
                out += pm
        return out

    def rows(self, session_id: bytes, timing: bool = True) -> list[dict]:
        rows = []
        for name, pm in self.phases.items():
            row = {"session_id": session_id.hex(), "phase": name, **asdict(pm)}
            row["millis"] = round(pm.millis, 3) if timing else 0
            rows.append(row)
        return rows


def write_metrics_csv(path_or_file, rows: list[dict], header: bool = True) -> None:
    """Append metric rows in the fixed column order."""
    if isinstance(path_or_file, (str, os.PathLike)):
        with open(path_or_file, "a" if not header else "w", newline="") as fh:
            write_metrics_csv(fh, rows, header)
        return
    writer = csv.DictWriter(path_or_file, fieldnames=CSV_COLUMNS, extrasaction="ignore")
    if header:
        writer.writeheader()
    writer.writerows(rows)


def metrics_csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    write_metrics_csv(buf, rows)
    return buf.getvalue()


class Channel(ABC):
    """One party's end of a duplex framed connection.

    ``recv`` demultiplexes by ``(msg_type, bin_id, j)``: frames for other
    tags are parked in arrival order and handed out later, so consumers of
    one tag never see frames reordered.
    """

    def __init__(self, session_id: bytes, is_client: bool, timeout: float | None = 600.0):
        if len(session_id) != 8:
            raise ValueError("session_id must be 8 bytes")
        self.session_id = session_id
        self.is_client = is_client
        self.timeout = timeout
        self.metrics = TranscriptMetrics()
        self._parked: dict[tuple[MsgType, int, int], deque[tuple[int, Frame]]] = {}
        self._seq = 0
        self._closed = False

    @property
    def _out_dir(self) -> str:
        return UP if self.is_client else DOWN

    @property
    def _in_dir(self) -> str:
        return DOWN if self.is_client else UP

    @abstractmethod
    def _write(self, data: bytes) -> None: ...

    @abstractmethod
    def _read_frame(self) -> bytes: ...

    def flush(self) -> None:
        pass

    def phase(self, name: str) -> None:
        self.metrics.set_phase(name)

    def send_frame(self, frame: Frame) -> None:
        if self._closed:
            raise ChannelClosed("send on closed channel")
        raw = frame.to_bytes()
        self._write(raw)
        self.metrics.record(self._out_dir, raw)

    def send(self, msg_type: MsgType, payload: bytes = b"", bin_id: int = 0, j: int = 0) -> None:
        self.send_frame(Frame(self.session_id, bin_id, j, msg_type, payload))

    def _next_wire_frame(self) -> Frame:
        self.flush()
        raw = self._read_frame()
        frame = Frame.from_bytes(raw)
        if frame.session_id != self.session_id:
            raise TransportError("frame from a different session")
        if frame.msg_type == MsgType.ABORT:
            raise ChannelClosed(f"peer aborted: {frame.payload.decode(errors='replace')}")
        # counted in wire order so both ends hash the same transcript
        self.metrics.record(self._in_dir, raw)
        return frame

    def recv_frame(self, expected_type: MsgType | None = None) -> Frame:
        """Next frame in arrival order, parked ones first."""
        waiting = [q for q in self._parked.values() if q]
        if waiting:
            frame = min(waiting, key=lambda q: q[0][0]).popleft()[1]
        else:
            frame = self._next_wire_frame()
        if expected_type is not None and frame.msg_type != expected_type:
            raise FrameTypeMismatch(f"expected {expected_type.name}, got {frame.msg_type.name}")
        return frame

    def gather(self, keys) -> None:
        """Read until every ``(msg_type, bin_id, j)`` in ``keys`` is parked.

        Parties call this before replying so a whole incoming flow is
        consumed first; that keeps both ends' transcripts in one order.
        """
        need = Counter(keys)
        for key, queue_ in self._parked.items():
            if key in need:
                need[key] -= len(queue_)
        remaining = sum(v for v in need.values() if v > 0)
        while remaining:
            frame = self._next_wire_frame()
            fkey = (frame.msg_type, frame.bin_id, frame.j)
            self._seq += 1
            self._parked.setdefault(fkey, deque()).append((self._seq, frame))
            if need.get(fkey, 0) > 0:
                need[fkey] -= 1
                remaining -= 1

    def recv(self, msg_type: MsgType, bin_id: int = 0, j: int = 0) -> bytes:
        """Payload of the next frame with exactly this type and tag."""
        key = (msg_type, bin_id, j)
        parked = self._parked.get(key)
        if parked:
            frame = parked.popleft()[1]
        else:
            while True:
                frame = self._next_wire_frame()
                fkey = (frame.msg_type, frame.bin_id, frame.j)
                if fkey == key:
                    break
                self._seq += 1
                self._parked.setdefault(fkey, deque()).append((self._seq, frame))
        return frame.payload

    def abort(self, reason: str) -> None:
        if not self._closed:
            try:
                self._write(Frame(self.session_id, 0, 0, MsgType.ABORT, reason.encode()[:1024]).to_bytes())
                self.flush()
            except (OSError, TransportError):
                pass
        self.close()

    def close(self) -> None:
        self._closed = True


class LocalChannel(Channel):
    """In-process end backed by a pair of queues of raw frame bytes."""

    def __init__(self, session_id, is_client, inbox: queue.Queue, outbox: queue.Queue, timeout=600.0):
        super().__init__(session_id, is_client, timeout)
        self._inbox = inbox
        self._outbox = outbox

    def _write(self, data: bytes) -> None:
        self._outbox.put(bytes(data))

    def _read_frame(self) -> bytes:
        try:
            item = self._inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError("timed out waiting for peer") from None
        if item is None:
            raise ChannelClosed("peer closed the channel")
        return item

    def close(self) -> None:
        if not self._closed:
            self._outbox.put(None)
        super().close()


def local_pair(session_id: bytes, timeout: float | None = 600.0) -> tuple[LocalChannel, LocalChannel]:
    """Connected (client, server) in-process channels."""
    up: queue.Queue = queue.Queue()
    down: queue.Queue = queue.Queue()
    client = LocalChannel(session_id, True, inbox=down, outbox=up, timeout=timeout)
    server = LocalChannel(session_id, False, inbox=up, outbox=down, timeout=timeout)
    return client, server


class TcpChannel(Channel):
    """Channel over a connected TCP socket; writes are buffered until the next read."""

    def __init__(self, sock: socket.socket, session_id: bytes, is_client: bool, timeout=600.0):
        super().__init__(session_id, is_client, timeout)
        sock.settimeout(timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock
        self._rfile = sock.makefile("rb")
        self._pending: list[bytes] = []

    def _write(self, data: bytes) -> None:
        self._pending.append(data)
        if sum(map(len, self._pending)) > 1 << 20:
            self.flush()

    def flush(self) -> None:
        if self._pending:
            try:
                self._sock.sendall(b"".join(self._pending))
            except OSError as exc:
                raise ChannelClosed(str(exc)) from exc
            self._pending.clear()

    def _read_exact(self, n: int) -> bytes:
        try:
            data = self._rfile.read(n)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from exc
        if data is None or len(data) < n:
            raise ChannelClosed("connection closed mid-frame")
        return data

    def _read_frame(self) -> bytes:
        head = self._read_exact(HEADER_SIZE)
        length = HEADER.unpack(head)[4]
        return head + self._read_exact(length)

    def close(self) -> None:
        if not self._closed:
            try:
                self.flush()
            except TransportError:
                pass
            try:
                self._rfile.close()
                self._sock.close()
            except OSError:
                pass
        super().close()


def parse_addr(addr: str | None) -> tuple[str, int]:
    addr = addr or os.environ.get(ADDR_ENV, DEFAULT_ADDR)
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host, int(port)


def tcp_listen(addr: str | None) -> socket.socket:
    host, port = parse_addr(addr)
    srv = socket.create_server((host, port), reuse_port=False)
    return srv


def tcp_accept(listener: socket.socket, session_id: bytes, timeout=600.0) -> TcpChannel:
    listener.settimeout(timeout)
    conn, _ = listener.accept()
    return TcpChannel(conn, session_id, is_client=False, timeout=timeout)


def tcp_connect(addr: str | None, session_id: bytes, retries: int = 50, timeout=600.0) -> TcpChannel:
    host, port = parse_addr(addr)
    last: OSError | None = None
    for _ in range(retries):
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            return TcpChannel(sock, session_id, is_client=True, timeout=timeout)
        except OSError as exc:
            last = exc
            time.sleep(0.1)
    raise ChannelClosed(f"could not connect to {host}:{port}: {last}")


@contextmanager
def phase(channel: Channel, name: str):
    channel.phase(name)
    yield channel
