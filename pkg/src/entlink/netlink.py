"""Classical channel: bit-exact message framing and two transports.

Wire format per message: magic "QKD1" (4 bytes), version (1), type (1),
frame id (4, big-endian), payload length (4, big-endian), payload.  Integers
are big-endian throughout so transcripts are portable across endpoints.

Transports are a reliable TCP stream and an in-process loopback queue pair;
both expose the same byte interface, so a fully seeded run produces a
byte-identical transcript on either.
"""

from __future__ import annotations

import queue
import socket
import struct
from dataclasses import dataclass, field
from enum import IntEnum

MAGIC = b"QKD1"
VERSION = 1
HEADER_LEN = 14
MAX_PAYLOAD = 1 << 24
DEFAULT_TIMEOUT_S = 30.0

ABORT_VERSION_MISMATCH = 1
ABORT_PARAM_MISMATCH = 2
ABORT_PROTOCOL = 3


class MsgType(IntEnum):
    HELLO = 0
    SYNC_PUBLIC_TAGS = 1
    BASIS_ANNOUNCE = 2
    FRAME_STATS = 3
    DISCLOSE_POSITIONS = 4
    DISCLOSE_BITS = 5
    CASCADE_PARITY_REQ = 6
    CASCADE_PARITY_RESP = 7
    PA_SEED = 8
    KEY_CONFIRM = 9
    ABORT = 10


class FramingError(ValueError):
    """Bad magic or malformed header; the connection must be dropped."""


class NeedMoreBytes(Exception):
    """The buffer does not yet hold one complete message."""


class SessionAborted(RuntimeError):
    """The peer aborted, timed out, or closed the session."""


@dataclass(frozen=True)
class Message:
    type: MsgType
    frame_id: int = 0
    payload: bytes = b""
    version: int = VERSION


def encode(msg: Message) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise ValueError(f"payload of {len(msg.payload)} bytes exceeds {MAX_PAYLOAD}")
    return (
        MAGIC
        + struct.pack(">BBII", msg.version, int(msg.type), msg.frame_id, len(msg.payload))
        + msg.payload
    )


def decode(buf: bytes) -> tuple[Message, bytes]:
    """Parse exactly one message; return it plus the unconsumed remainder."""
    if len(buf) < HEADER_LEN:
        raise NeedMoreBytes(f"have {len(buf)} bytes, header needs {HEADER_LEN}")
    if buf[:4] != MAGIC:
        raise FramingError(f"bad magic {buf[:4]!r}")
    version, mtype, frame_id, length = struct.unpack(">BBII", buf[4:HEADER_LEN])
    if length > MAX_PAYLOAD:
        raise FramingError(f"payload length {length} exceeds {MAX_PAYLOAD}")
    try:
        mtype = MsgType(mtype)
    except ValueError as err:
        raise FramingError(f"unknown message type {mtype}") from err
    end = HEADER_LEN + length
    if len(buf) < end:
        raise NeedMoreBytes(f"have {len(buf)} bytes, message needs {end}")
    return Message(type=mtype, frame_id=frame_id, payload=bytes(buf[HEADER_LEN:end]), version=version), buf[end:]


class LoopbackTransport:
    """One end of an in-memory queue pair."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    @staticmethod
    def pair() -> tuple["LoopbackTransport", "LoopbackTransport"]:
        q_ab: queue.Queue = queue.Queue()
        q_ba: queue.Queue = queue.Queue()
        return LoopbackTransport(q_ba, q_ab), LoopbackTransport(q_ab, q_ba)

    def send_bytes(self, data: bytes):
        if self._closed:
            raise SessionAborted("transport closed")
        self._outbox.put(data)

    def recv_bytes(self, timeout: float) -> bytes:
        try:
            data = self._inbox.get(timeout=timeout)
        except queue.Empty as err:
            raise SessionAborted(f"no data within {timeout} s") from err
        if data is None:
            raise SessionAborted("peer closed")
        return data

    def close(self):
        if not self._closed:
            self._closed = True
            self._outbox.put(None)


class TcpTransport:
    """Blocking TCP stream endpoint."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @staticmethod
    def connect(host: str, port: int, timeout: float = DEFAULT_TIMEOUT_S) -> "TcpTransport":
        sock = socket.create_connection((host, port), timeout=timeout)
        return TcpTransport(sock)

    @staticmethod
    def listen_once(host: str, port: int, timeout: float = DEFAULT_TIMEOUT_S) -> "TcpTransport":
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(1)
        srv.settimeout(timeout)
        try:
            conn, _ = srv.accept()
        finally:
            srv.close()
        return TcpTransport(conn)

    def send_bytes(self, data: bytes):
        try:
            self._sock.sendall(data)
        except OSError as err:
            raise SessionAborted(f"send failed: {err}") from err

    def recv_bytes(self, timeout: float) -> bytes:
        self._sock.settimeout(timeout)
        try:
            data = self._sock.recv(1 << 16)
        except OSError as err:
            raise SessionAborted(f"recv failed: {err}") from err
        if not data:
            raise SessionAborted("peer closed")
        return data

    def close(self):
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class MessageChannel:
    """Ordered half-duplex message channel with a replayable transcript.

    The transcript records every frame in order with a direction prefix
    (0 = sent by this endpoint, 1 = received); ``read_transcript`` replays
    it through ``decode``.
    """

    def __init__(self, transport, timeout_s: float = DEFAULT_TIMEOUT_S, record: bool = True):
        self._transport = transport
        self.timeout_s = timeout_s
        self._buf = b""
        self.record = record
        self.transcript: list[tuple[int, bytes]] = []

    def send(self, msg: Message):
        data = encode(msg)
        if self.record:
            self.transcript.append((0, data))
        self._transport.send_bytes(data)

    def recv(self) -> Message:
        while True:
            try:
                msg, rest = decode(self._buf)
            except NeedMoreBytes:
                self._buf += self._transport.recv_bytes(self.timeout_s)
                continue
            if self.record:
                self.transcript.append((1, self._buf[: len(self._buf) - len(rest)]))
            self._buf = rest
            if msg.type == MsgType.ABORT and msg.payload != b"\x00":
                raise SessionAborted(f"peer aborted with reason {msg.payload!r}")
            return msg

    def request(self, msg: Message) -> Message:
        self.send(msg)
        return self.recv()

    def close(self):
        self._transport.close()

    def dump_transcript(self, path):
        with open(path, "wb") as fh:
            for direction, data in self.transcript:
                fh.write(bytes([direction]))
                fh.write(data)

    def transcript_bytes(self, direction: int | None = None) -> bytes:
        return b"".join(d for dir_, d in self.transcript if direction is None or dir_ == direction)


def read_transcript(path) -> list[tuple[int, Message]]:
    """Replay a transcript capture: (direction, Message) in recorded order."""
    with open(path, "rb") as fh:
        raw = fh.read()
    out = []
    pos = 0
    while pos < len(raw):
        direction = raw[pos]
        msg, rest = decode(raw[pos + 1 :])
        consumed = len(raw) - pos - 1 - len(rest)
        out.append((direction, msg))
        pos += 1 + consumed
    return out


@dataclass
class HelloInfo:
    role: str
    params_digest: bytes = b""


def _hello_payload(info: HelloInfo) -> bytes:
    role = info.role.encode()
    return bytes([len(role)]) + role + info.params_digest


def session(
    transport,
    role: str,
    params_digest: bytes = b"",
    timeout_s: float = DEFAULT_TIMEOUT_S,
    record: bool = True,
) -> MessageChannel:
    """HELLO handshake; Bob speaks first, Alice answers.

    Version or parameter mismatches abort the session with reason codes 1
    and 2 respectively.
    """
    chan = MessageChannel(transport, timeout_s=timeout_s, record=record)
    ours = Message(MsgType.HELLO, 0, _hello_payload(HelloInfo(role, params_digest)))
    if role == "B":
        chan.send(ours)
        theirs = chan.recv()
    else:
        theirs = chan.recv()
        chan.send(ours)
    if theirs.type != MsgType.HELLO:
        chan.send(Message(MsgType.ABORT, 0, bytes([ABORT_PROTOCOL])))
        raise SessionAborted(f"expected HELLO, got {theirs.type.name}")
    if theirs.version != VERSION:
        chan.send(Message(MsgType.ABORT, 0, bytes([ABORT_VERSION_MISMATCH])))
        raise SessionAborted(f"version mismatch: ours {VERSION}, theirs {theirs.version}")
    their_digest = theirs.payload[1 + theirs.payload[0] :]
    if their_digest != params_digest:
        chan.send(Message(MsgType.ABORT, 0, bytes([ABORT_PARAM_MISMATCH])))
        raise SessionAborted("protocol parameter mismatch")
    return chan


def audit_transcript(entries: list[tuple[int, Message]], from_alice: int) -> dict:
    """Count key-relevant bits in a replayed transcript.

    Sums the declared bit counts of DISCLOSE_BITS and CASCADE_PARITY_RESP
    payloads and the 64-bit KEY_CONFIRM hashes sent by Alice; the total must
    equal the protocol's leakage ledger exactly.
    """
    disclosed = parity = hashed = 0
    for direction, msg in entries:
        if direction != from_alice:
            continue
        if msg.type == MsgType.DISCLOSE_BITS:
            disclosed += struct.unpack(">I", msg.payload[:4])[0]
        elif msg.type == MsgType.CASCADE_PARITY_RESP:
            parity += struct.unpack(">I", msg.payload[:4])[0]
        elif msg.type == MsgType.KEY_CONFIRM:
            hashed += 64
    return {
        "disclosed_bits": disclosed,
        "parity_bits": parity,
        "hash_bits": hashed,
        "total_bits": disclosed + parity + hashed,
    }
