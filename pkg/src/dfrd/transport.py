"""Newline-delimited JSON wire protocol for remote black-box teachers.

Every frame is one compact UTF-8 JSON object on its own line.  Field order is
fixed per frame type::

    hello:  t, proto, n_dim, k, n_classes
    query:  t, seq, x
    answer: t, seq, y[, soft]
    error:  t, seq, code, msg
    bye:    t

The student opens with ``hello``; the teacher echoes its own ``hello`` when
the dimensions match its model, or replies with ``error`` and closes.  Each
``query`` is answered by an ``answer`` carrying the same ``seq``.
"""
from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from dataclasses import dataclass

from .errors import IncompleteFrame, InvalidInputError, ProtocolError, TransferError
from .kt import TeacherHandle, blackbox_answer
from .mlp import MlpModel
from .rrf import RrfVector

log = logging.getLogger(__name__)

PROTO = "dfrd/1"
MAX_LINE = 1 << 20


@dataclass(frozen=True)
class Hello:
    n_dim: int
    k: int
    n_classes: int
    proto: str = PROTO


@dataclass(frozen=True)
class Query:
    seq: int
    x: tuple


@dataclass(frozen=True)
class Answer:
    seq: int
    y: int
    soft: tuple | None = None


@dataclass(frozen=True)
class Error:
    seq: int
    code: str
    msg: str


@dataclass(frozen=True)
class Bye:
    pass


def encode_frame(f) -> bytes:
    if isinstance(f, Hello):
        doc = {"t": "hello", "proto": f.proto, "n_dim": f.n_dim, "k": f.k, "n_classes": f.n_classes}
    elif isinstance(f, Query):
        doc = {"t": "query", "seq": f.seq, "x": list(f.x)}
    elif isinstance(f, Answer):
        doc = {"t": "answer", "seq": f.seq, "y": f.y}
        if f.soft is not None:
            doc["soft"] = list(f.soft)
    elif isinstance(f, Error):
        doc = {"t": "error", "seq": f.seq, "code": f.code, "msg": f.msg}
    elif isinstance(f, Bye):
        doc = {"t": "bye"}
    else:
        raise TypeError(f"not a frame: {f!r}")
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode("utf-8") + b"\n"


_FIELDS = {
    "hello": ("proto", "n_dim", "k", "n_classes"),
    "query": ("seq", "x"),
    "answer": ("seq", "y"),
    "error": ("seq", "code", "msg"),
    "bye": (),
}
_OPTIONAL = {"answer": ("soft",)}


def _uint(doc, key):
    v = doc[key]
    if type(v) is not int or v < 0 or v >= 1 << 64:
        raise ProtocolError("bad_field", f"{key!r} must be an unsigned integer, got {v!r}")
    return v


def _indices(doc, key):
    v = doc[key]
    if not isinstance(v, list) or any(type(i) is not int or i < 0 for i in v):
        raise ProtocolError("bad_field", f"{key!r} must be a list of nonnegative integers")
    if len(set(v)) != len(v):
        raise ProtocolError("duplicate_index", f"{key!r} repeats an index: {v}")
    return tuple(v)


def decode_frame(line: bytes):
    """Parse one line-feed-terminated frame.

    Raises :class:`IncompleteFrame` when the terminator is missing and
    :class:`ProtocolError` for anything malformed.
    """
    if not line.endswith(b"\n"):
        raise IncompleteFrame("frame not terminated by a line feed")
    try:
        doc = json.loads(line[:-1].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError("bad_json", str(exc)) from exc
    if not isinstance(doc, dict) or "t" not in doc:
        raise ProtocolError("bad_frame", "frame must be an object with a 't' field")
    t = doc["t"]
    if t not in _FIELDS:
        raise ProtocolError("unknown_type", f"unknown frame type {t!r}")
    required = _FIELDS[t]
    missing = [k for k in required if k not in doc]
    if missing:
        raise ProtocolError("missing_field", f"{t} frame lacks {missing}")
    extra = set(doc) - {"t", *required, *_OPTIONAL.get(t, ())}
    if extra:
        raise ProtocolError("unknown_field", f"{t} frame has unexpected fields {sorted(extra)}")
    if t == "hello":
        if not isinstance(doc["proto"], str):
            raise ProtocolError("bad_field", "'proto' must be a string")
        return Hello(_uint(doc, "n_dim"), _uint(doc, "k"), _uint(doc, "n_classes"), doc["proto"])
    if t == "query":
        return Query(_uint(doc, "seq"), _indices(doc, "x"))
    if t == "answer":
        soft = _indices(doc, "soft") if "soft" in doc else None
        return Answer(_uint(doc, "seq"), _uint(doc, "y"), soft)
    if t == "error":
        if not isinstance(doc["code"], str) or not isinstance(doc["msg"], str):
            raise ProtocolError("bad_field", "'code' and 'msg' must be strings")
        return Error(_uint(doc, "seq"), doc["code"], doc["msg"])
    return Bye()


class FrameBuffer:
    """Incremental decoder: feed arbitrary byte chunks, get complete frames."""

    def __init__(self):
        self._buf = b""

    def feed(self, data: bytes) -> list:
        self._buf += data
        frames = []
        while True:
            nl = self._buf.find(b"\n")
            if nl < 0:
                break
            line, self._buf = self._buf[:nl + 1], self._buf[nl + 1:]
            frames.append(decode_frame(line))
        return frames

    @property
    def pending(self) -> bytes:
        return self._buf


class Channel:
    """Duplex byte channel built from a binary reader and writer."""

    def __init__(self, reader, writer, closer=None):
        self.reader = reader
        self.writer = writer
        self._closer = closer

    @classmethod
    def from_socket(cls, sock: socket.socket) -> Channel:
        return cls(sock.makefile("rb"), sock.makefile("wb"), sock.close)

    def send(self, frame) -> None:
        self.writer.write(encode_frame(frame))
        self.writer.flush()

    def recv(self):
        """Next frame, or ``None`` at end of stream."""
        line = self.reader.readline(MAX_LINE)
        if not line:
            return None
        try:
            return decode_frame(line)
        except IncompleteFrame:
            raise ProtocolError("truncated", "stream ended inside a frame") from None

    def close(self) -> None:
        for f in (self.writer, self.reader):
            try:
                f.close()
            except (OSError, ValueError):
                pass
        if self._closer is not None:
            try:
                self._closer()
            except OSError:
                pass


@dataclass
class SessionState:
    n_dim: int = 0
    k: int = 0
    n_classes: int = 0
    next_seq: int = 0
    role: str = "teacher"
    negotiated: bool = False
    closed: bool = False


@dataclass
class ServeSummary:
    queries_answered: int = 0
    errors: int = 0
    clean_close: bool = False


def serve_teacher(model: MlpModel, channel: Channel, soft: bool = False) -> ServeSummary:
    """Answer queries on one connection until ``bye`` or end of stream."""
    state = SessionState(role="teacher")
    summary = ServeSummary()

    def fail(seq, code, msg):
        summary.errors += 1
        channel.send(Error(seq, code, msg))

    while True:
        try:
            frame = channel.recv()
        except ProtocolError as exc:
            fail(state.next_seq, exc.code, exc.msg)
            if exc.code == "truncated":
                break
            continue
        if frame is None:
            break
        if isinstance(frame, Bye):
            summary.clean_close = True
            break
        if not state.negotiated:
            if not isinstance(frame, Hello):
                fail(0, "not_negotiated", "expected hello before any other frame")
                break
            cfg = model.config
            if frame.proto != PROTO:
                fail(0, "bad_proto", f"unsupported protocol {frame.proto!r}")
                break
            if (frame.n_dim, frame.n_classes) != (cfg.in_dim, cfg.out_dim) or frame.k < 1:
                fail(0, "dim_mismatch",
                     f"teacher serves n_dim={cfg.in_dim} n_classes={cfg.out_dim}, "
                     f"student asked n_dim={frame.n_dim} k={frame.k} n_classes={frame.n_classes}")
                break
            state.n_dim, state.k, state.n_classes = frame.n_dim, frame.k, frame.n_classes
            state.negotiated = True
            channel.send(Hello(cfg.in_dim, frame.k, cfg.out_dim))
            continue
        if not isinstance(frame, Query):
            fail(state.next_seq, "unexpected", f"teacher cannot accept {type(frame).__name__.lower()}")
            continue
        if frame.seq < state.next_seq:
            fail(frame.seq, "seq_order", f"seq {frame.seq} not increasing")
            break
        state.next_seq = frame.seq + 1
        if not frame.x or len(frame.x) > min(state.k, state.n_dim):
            fail(frame.seq, "bad_query", f"query must hold 1..{min(state.k, state.n_dim)} indices")
            continue
        if max(frame.x) >= state.n_dim:
            fail(frame.seq, "index_range", f"index >= n_dim={state.n_dim}")
            continue
        query = RrfVector(state.n_dim, len(frame.x), frame.x)
        y, soft_v = blackbox_answer(model, query, state.k)
        channel.send(Answer(frame.seq, y, soft_v.entries if soft else None))
        summary.queries_answered += 1
    return summary


class RemoteTeacher(TeacherHandle):
    """Teacher reached over a :class:`Channel`; exposes answers only."""

    def __init__(self, channel: Channel, n_dim: int, n_classes: int, k: int,
                 teacher_id: str = "remote"):
        self.teacher_id = teacher_id
        self._channel = channel
        self._state = SessionState(n_dim, k, n_classes, role="student")
        self.calls = 0
        channel.send(Hello(n_dim, k, n_classes))
        reply = self._recv()
        if isinstance(reply, Error):
            raise TransferError(f"teacher refused session: {reply.code}: {reply.msg}")
        if not isinstance(reply, Hello):
            raise ProtocolError("unexpected", f"expected hello, got {reply!r}")
        if (reply.n_dim, reply.n_classes) != (n_dim, n_classes):
            raise ProtocolError("dim_mismatch", f"teacher announced {reply}")
        self._state.negotiated = True

    def _recv(self):
        try:
            frame = self._channel.recv()
        except OSError as exc:
            raise TransferError(f"stream lost: {exc}") from exc
        if frame is None:
            raise TransferError("teacher closed the stream")
        return frame

    def answer(self, query):
        if self._state.closed:
            raise ProtocolError("state", "session already closed with bye")
        if not isinstance(query, RrfVector):
            raise TransferError("dense queries have no wire encoding")
        if query.dim != self._state.n_dim:
            raise InvalidInputError(f"query has dimension {query.dim}, session uses {self._state.n_dim}")
        seq = self._state.next_seq
        self._state.next_seq += 1
        try:
            self._channel.send(Query(seq, query.entries))
        except OSError as exc:
            raise TransferError(f"stream lost: {exc}", seq=seq) from exc
        reply = self._recv()
        self.calls += 1
        if isinstance(reply, Error):
            raise TransferError(f"teacher error {reply.code}: {reply.msg}", seq=seq)
        if not isinstance(reply, Answer):
            raise ProtocolError("unexpected", f"expected answer, got {reply!r}", seq=seq)
        if reply.seq != seq:
            raise ProtocolError("seq_order", f"answer seq {reply.seq} for query {seq}", seq=seq)
        if reply.y >= self._state.n_classes:
            raise ProtocolError("bad_field", f"class {reply.y} >= n_classes", seq=seq)
        soft = None
        if reply.soft is not None:
            soft = RrfVector(self._state.n_classes, len(reply.soft), reply.soft)
            if soft.entries[0] != reply.y:
                raise ProtocolError("bad_field", "soft answer disagrees with y", seq=seq)
        return reply.y, soft

    def close(self) -> None:
        if not self._state.closed:
            self._state.closed = True
            try:
                self._channel.send(Bye())
            except OSError:
                pass
            self._channel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def remote_teacher(channel: Channel, n_dim: int, n_classes: int, k: int,
                   teacher_id: str = "remote") -> RemoteTeacher:
    return RemoteTeacher(channel, n_dim, n_classes, k, teacher_id)


def parse_addr(addr: str, default_host: str = "127.0.0.1") -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep:
        host, port = default_host, addr
    try:
        return host or default_host, int(port)
    except ValueError:
        raise InvalidInputError(f"bad address {addr!r}; expected host:port") from None


def connect(addr: str, n_dim: int, n_classes: int, k: int, teacher_id: str = "remote",
            timeout: float | None = 30.0) -> RemoteTeacher:
    host, port = parse_addr(addr)
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransferError(f"cannot reach teacher at {addr}: {exc}") from exc
    return remote_teacher(Channel.from_socket(sock), n_dim, n_classes, k, teacher_id)


class TeacherServer(socketserver.ThreadingTCPServer):
    """TCP server; each connection gets its own session, the model is shared."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, model: MlpModel, addr: tuple[str, int], soft: bool = False):
        self.model = model
        self.soft = soft
        self.summaries = []
        self._lock = threading.Lock()
        super().__init__(addr, _Handler)

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        channel = Channel.from_socket(self.request)
        try:
            summary = serve_teacher(self.server.model, channel, soft=self.server.soft)
        except OSError as exc:
            log.warning("connection from %s dropped: %s", self.client_address, exc)
            return
        finally:
            channel.close()
        with self.server._lock:
            self.server.summaries.append(summary)
        log.info("served %d queries to %s", summary.queries_answered, self.client_address)
