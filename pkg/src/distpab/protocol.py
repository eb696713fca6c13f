"""Two-phase parameter exchange between a coordinator and its workers.

Frame layout (all integers little-endian)::

    b"DPAB" | version:u8 | type:u8 | payload_len:u32 | payload

Phase 1 is ``HELLO`` + ``SUMMARY`` from each worker, Phase 2 is ``PARAMS``
from the coordinator followed by the worker's ``DONE``. Payload sizes depend
on the attribute count only, never on the number of rows.

The session logic is written against a tiny channel interface (``send`` /
``recv``) so the same code runs over TCP sockets and over in-memory queues.
"""

import enum
import logging
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    BadMagicError,
    BadVersionError,
    OversizeFrameError,
    ProtocolError,
    ProtocolStateError,
    RemoteError,
    SessionAborted,
    TruncatedFrameError,
    UnknownMessageTypeError,
)
from .perturb import GlobalParams, coordinate, node_perturb
from .stats import PartitionSummary, summarize

logger = logging.getLogger(__name__)

MAGIC = b"DPAB"
VERSION = 1
MAX_PAYLOAD = 256 * 1024 * 1024
_HEADER = struct.Struct("<4sBBI")
HEADER_SIZE = _HEADER.size
DEFAULT_TIMEOUT = 60.0


class MsgType(enum.IntEnum):
    HELLO = 1
    SUMMARY = 2
    PARAMS = 3
    DONE = 4
    ERROR = 5


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    payload: bytes = b""


def encode(msg):
    payload = bytes(msg.payload)
    if len(payload) > MAX_PAYLOAD:
        raise OversizeFrameError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return _HEADER.pack(MAGIC, VERSION, int(msg.msg_type), len(payload)) + payload


def parse_header(header):
    """Validate a 10-byte header and return ``(msg_type, payload_len)``."""
    if len(header) < HEADER_SIZE:
        raise TruncatedFrameError(f"header needs {HEADER_SIZE} bytes, got {len(header)}")
    magic, version, msg_type, length = _HEADER.unpack(header[:HEADER_SIZE])
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BadVersionError(f"unsupported protocol version {version}")
    try:
        msg_type = MsgType(msg_type)
    except ValueError:
        raise UnknownMessageTypeError(f"unknown message type {msg_type}") from None
    if length > MAX_PAYLOAD:
        raise OversizeFrameError(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    return msg_type, length


def decode(buf):
    """Decode exactly one frame."""
    buf = bytes(buf)
    msg_type, length = parse_header(buf)
    end = HEADER_SIZE + length
    if len(buf) < end:
        raise TruncatedFrameError(f"frame declares {length} payload bytes, only {len(buf) - HEADER_SIZE} present")
    if len(buf) > end:
        raise ProtocolError(f"{len(buf) - end} trailing bytes after frame")
    return WireMessage(msg_type, buf[HEADER_SIZE:end])


# -- payloads ---------------------------------------------------------------

_U32 = struct.Struct("<I")
_SUMMARY_HEAD = struct.Struct("<IIQ")
_PARAMS_HEAD = struct.Struct("<Id")


def _f64(arr):
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _read_f64(buf, offset, count):
    end = offset + 8 * count
    if end > len(buf):
        raise TruncatedFrameError("payload shorter than its declared dimensions")
    return np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64), end


def hello(node_id):
    return WireMessage(MsgType.HELLO, _U32.pack(node_id))


def decode_hello(msg):
    if len(msg.payload) != _U32.size:
        raise ProtocolError("HELLO payload must be 4 bytes")
    return _U32.unpack(msg.payload)[0]


def encode_summary(node_id, summary):
    n = summary.attr_count
    payload = _SUMMARY_HEAD.pack(node_id, n, summary.row_count) + _f64(summary.mean) + _f64(summary.cov)
    return WireMessage(MsgType.SUMMARY, payload)


def decode_summary(msg):
    """Return ``(node_id, PartitionSummary)``."""
    buf = msg.payload
    if len(buf) < _SUMMARY_HEAD.size:
        raise TruncatedFrameError("SUMMARY payload too short")
    node_id, n, m = _SUMMARY_HEAD.unpack_from(buf)
    mean, off = _read_f64(buf, _SUMMARY_HEAD.size, n)
    cov, off = _read_f64(buf, off, n * n)
    if off != len(buf):
        raise ProtocolError("SUMMARY payload has trailing bytes")
    return node_id, PartitionSummary(cov.reshape(n, n), mean, m)


def encode_params(params):
    n = params.attr_count
    payload = b"".join(
        [
            _PARAMS_HEAD.pack(n, params.sigma),
            _f64(params.rotation),
            _f64(params.translation),
            _f64(params.reflection),
            _f64(params.stdvec),
            _f64(params.meanvec),
        ]
    )
    return WireMessage(MsgType.PARAMS, payload)


def decode_params(msg):
    buf = msg.payload
    if len(buf) < _PARAMS_HEAD.size:
        raise TruncatedFrameError("PARAMS payload too short")
    n, sigma = _PARAMS_HEAD.unpack_from(buf)
    size = (n + 1) * (n + 1)
    off = _PARAMS_HEAD.size
    mats = []
    for _ in range(3):
        flat, off = _read_f64(buf, off, size)
        mats.append(flat.reshape(n + 1, n + 1))
    stdvec, off = _read_f64(buf, off, n)
    meanvec, off = _read_f64(buf, off, n)
    if off != len(buf):
        raise ProtocolError("PARAMS payload has trailing bytes")
    rotation, translation, reflection = mats
    if np.max(np.abs(rotation @ rotation.T - np.eye(n + 1))) > 1e-9:
        raise ProtocolError("received rotation matrix is not orthonormal")
    return GlobalParams(rotation, translation, reflection, stdvec, meanvec, sigma)


def error(text):
    return WireMessage(MsgType.ERROR, str(text).encode("utf-8"))


def done():
    return WireMessage(MsgType.DONE)


def phase_bytes(n):
    """Bytes exchanged with one worker in a successful session (both directions)."""
    hello_b = HEADER_SIZE + 4
    summary_b = HEADER_SIZE + _SUMMARY_HEAD.size + 8 * (n + n * n)
    params_b = HEADER_SIZE + _PARAMS_HEAD.size + 8 * (3 * (n + 1) ** 2 + 2 * n)
    return hello_b + summary_b + params_b + HEADER_SIZE


# -- channels -----------------------------------------------------------------


class SocketChannel:
    """Frame-oriented wrapper around a connected stream socket."""

    def __init__(self, sock, timeout=DEFAULT_TIMEOUT, record=False):
        self.sock = sock
        self.sock.settimeout(timeout)
        self.bytes_sent = 0
        self.bytes_received = 0
        self.traffic = [] if record else None

    def send(self, msg):
        frame = encode(msg)
        self.sock.sendall(frame)
        self.bytes_sent += len(frame)
        if self.traffic is not None:
            self.traffic.append(frame)

    def _recv_exact(self, count):
        chunks = []
        remaining = count
        while remaining:
            chunk = self.sock.recv(remaining)
            if not chunk:
                break
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def recv(self):
        header = self._recv_exact(HEADER_SIZE)
        if not header:
            raise ConnectionError("peer closed the connection")
        msg_type, length = parse_header(header)
        payload = self._recv_exact(length)
        if len(payload) != length:
            raise TruncatedFrameError("connection closed mid-frame")
        self.bytes_received += HEADER_SIZE + length
        if self.traffic is not None:
            self.traffic.append(header + payload)
        return WireMessage(msg_type, payload)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class MemoryChannel:
    """One end of an in-process duplex channel; frames still go through encode/decode."""

    def __init__(self, inbox, outbox, timeout=DEFAULT_TIMEOUT, record=False):
        self._inbox = inbox
        self._outbox = outbox
        self.timeout = timeout
        self.bytes_sent = 0
        self.bytes_received = 0
        self.traffic = [] if record else None

    def send(self, msg):
        frame = encode(msg)
        self._outbox.put(frame)
        self.bytes_sent += len(frame)
        if self.traffic is not None:
            self.traffic.append(frame)

    def recv(self):
        try:
            frame = self._inbox.get(timeout=self.timeout)
        except queue.Empty:
            raise TimeoutError("no frame received before timeout") from None
        if frame is None:
            raise ConnectionError("peer closed the connection")
        self.bytes_received += len(frame)
        if self.traffic is not None:
            self.traffic.append(frame)
        return decode(frame)

    def close(self):
        self._outbox.put(None)


def channel_pair(timeout=DEFAULT_TIMEOUT, record=False):
    a_to_b, b_to_a = queue.Queue(), queue.Queue()
    return (
        MemoryChannel(b_to_a, a_to_b, timeout, record),
        MemoryChannel(a_to_b, b_to_a, timeout, record),
    )


def parse_endpoint(text):
    host, sep, port = str(text).rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


# -- worker -------------------------------------------------------------------


class WorkerState(enum.Enum):
    START = "start"
    HELLO_SENT = "hello-sent"
    AWAIT_PARAMS = "await-params"
    FINISHED = "finished"


class WorkerSession:
    """Worker-side state machine. It does no I/O, so it can be driven by any channel."""

    def __init__(self, node_id, X, cfg, labels=None):
        self.node_id = int(node_id)
        self.X = X
        self.labels = labels
        self.cfg = cfg
        self.state = WorkerState.START
        self.output = None

    def hello(self):
        self._expect(WorkerState.START, "HELLO")
        self.state = WorkerState.HELLO_SENT
        return hello(self.node_id)

    def summary(self):
        self._expect(WorkerState.HELLO_SENT, "SUMMARY")
        self.state = WorkerState.AWAIT_PARAMS
        return encode_summary(self.node_id, summarize(self.X))

    def receive(self, msg):
        """Handle a coordinator frame; returns the DONE reply once perturbed."""
        if msg.msg_type == MsgType.ERROR:
            self.state = WorkerState.FINISHED
            raise RemoteError(msg.payload.decode("utf-8", "replace"))
        if msg.msg_type != MsgType.PARAMS or self.state != WorkerState.AWAIT_PARAMS:
            raise ProtocolStateError(f"unexpected {msg.msg_type.name} in state {self.state.value}")
        params = decode_params(msg)
        self.output = node_perturb(self.X, params, self.cfg, labels=self.labels, node_id=self.node_id)
        self.state = WorkerState.FINISHED
        return done()

    def _expect(self, state, what):
        if self.state != state:
            raise ProtocolStateError(f"cannot send {what} in state {self.state.value}")


def worker_loop(channel, session):
    try:
        channel.send(session.hello())
        channel.send(session.summary())
        reply = session.receive(channel.recv())
        channel.send(reply)
    finally:
        channel.close()
    return session.output


def run_worker(endpoint, X, cfg, node_id, labels=None, timeout=DEFAULT_TIMEOUT):
    """Connect to a coordinator, take part in one session and return the perturbed partition."""
    host, port = parse_endpoint(endpoint) if isinstance(endpoint, str) else endpoint
    sock = socket.create_connection((host, port), timeout=timeout)
    channel = SocketChannel(sock, timeout)
    return worker_loop(channel, WorkerSession(node_id, X, cfg, labels))


# -- coordinator --------------------------------------------------------------


@dataclass
class SessionReport:
    expected_workers: int
    status: str = "running"
    phi: float | None = None
    theta: float | None = None
    axis: int | None = None
    node_bytes: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    error: str | None = None

    def to_dict(self):
        return {
            "status": self.status,
            "expected_workers": self.expected_workers,
            "phi": self.phi,
            "theta": self.theta,
            "theta_degrees": None if self.theta is None else float(np.rad2deg(self.theta)),
            "axis": self.axis,
            "node_bytes": {str(k): v for k, v in sorted(self.node_bytes.items())},
            "timings": self.timings,
            "error": self.error,
        }


class CoordinatorSession:
    """Shared coordinator state; mutated only under ``self._cond``."""

    def __init__(self, expected_workers, cfg, timeout=DEFAULT_TIMEOUT):
        if expected_workers < 1:
            raise ValueError("expected_workers must be >= 1")
        self.k = int(expected_workers)
        self.cfg = cfg
        self.deadline = time.monotonic() + timeout
        self._cond = threading.Condition()
        self._summaries = {}
        self._done = set()
        self.params = None
        self.abort_reason = None
        self.report = SessionReport(self.k)
        self._t0 = time.perf_counter()

    def remaining(self):
        return max(0.0, self.deadline - time.monotonic())

    @property
    def finished(self):
        with self._cond:
            return self.abort_reason is not None or len(self._done) == self.k

    @property
    def barrier_reached(self):
        with self._cond:
            return len(self._summaries) == self.k

    def register(self, node_id, summary):
        """Record a summary; the k-th one triggers the parameter computation."""
        with self._cond:
            if self.abort_reason is not None:
                raise SessionAborted(self.abort_reason, self.report)
            if node_id in self._summaries:
                raise ProtocolStateError(f"duplicate node_id {node_id}")
            if len(self._summaries) == self.k:
                raise ProtocolStateError("session already has all expected workers")
            ns = {s.attr_count for s in self._summaries.values()}
            if ns and summary.attr_count not in ns:
                self._abort(f"inconsistent attribute count: node {node_id} sent n={summary.attr_count}, expected n={ns.pop()}")
                raise SessionAborted(self.abort_reason, self.report)
            self._summaries[node_id] = summary
            if len(self._summaries) < self.k:
                return
            self.report.timings["phase1_s"] = time.perf_counter() - self._t0
            t = time.perf_counter()
            try:
                # fold in node_id order so the result does not depend on arrival order
                ordered = [self._summaries[i] for i in sorted(self._summaries)]
                self.params = coordinate(ordered, self.cfg)
            except Exception as exc:
                self._abort(f"parameter generation failed: {exc}")
                raise SessionAborted(self.abort_reason, self.report) from exc
            self.report.timings["compute_s"] = time.perf_counter() - t
            self.report.phi = self.params.phi
            self.report.theta = self.params.theta
            self.report.axis = self.params.axis
            self._cond.notify_all()

    def wait_params(self):
        with self._cond:
            ok = self._cond.wait_for(lambda: self.params is not None or self.abort_reason is not None, self.remaining())
            if self.abort_reason is not None:
                raise SessionAborted(self.abort_reason, self.report)
            if not ok:
                self._abort("timed out waiting for worker summaries")
                raise SessionAborted(self.abort_reason, self.report)
            return self.params

    def mark_done(self, node_id, channel):
        with self._cond:
            self._done.add(node_id)
            self.record_bytes(node_id, channel)
            if len(self._done) == self.k:
                self.report.status = "completed"
                self.report.timings["total_s"] = time.perf_counter() - self._t0
            self._cond.notify_all()

    def record_bytes(self, node_id, channel):
        self.report.node_bytes[node_id] = {
            "received": channel.bytes_received,
            "sent": channel.bytes_sent,
            "total": channel.bytes_received + channel.bytes_sent,
        }

    def abort(self, reason):
        with self._cond:
            self._abort(reason)

    def _abort(self, reason):
        if self.abort_reason is None:
            self.abort_reason = reason
            self.report.status = "aborted"
            self.report.error = reason
            self.report.timings["total_s"] = time.perf_counter() - self._t0
            logger.warning("session aborted: %s", reason)
        self._cond.notify_all()

    def wait_finished(self):
        with self._cond:
            ok = self._cond.wait_for(
                lambda: self.abort_reason is not None or len(self._done) == self.k, self.remaining()
            )
            if not ok:
                self._abort("timed out before all workers finished")
            if self.abort_reason is not None:
                raise SessionAborted(self.abort_reason, self.report)
            return self.params, self.report


def serve_node(channel, session):
    """Coordinator side of one worker connection."""
    node_id = None
    try:
        first = channel.recv()
        if first.msg_type != MsgType.HELLO:
            raise ProtocolStateError(f"expected HELLO, got {first.msg_type.name}")
        node_id = decode_hello(first)
        msg = channel.recv()
        if msg.msg_type != MsgType.SUMMARY:
            raise ProtocolStateError(f"expected SUMMARY, got {msg.msg_type.name}")
        sender, summary = decode_summary(msg)
        if sender != node_id:
            raise ProtocolStateError(f"SUMMARY node_id {sender} does not match HELLO node_id {node_id}")
        session.register(node_id, summary)
        params = session.wait_params()
        channel.send(encode_params(params))
        reply = channel.recv()
        if reply.msg_type != MsgType.DONE:
            raise ProtocolStateError(f"expected DONE, got {reply.msg_type.name}")
        session.mark_done(node_id, channel)
    except SessionAborted as exc:
        _send_error(channel, exc.reason)
    except ProtocolStateError as exc:
        # a misbehaving worker is dropped; the others keep going
        logger.warning("node %s rejected: %s", node_id, exc)
        _send_error(channel, str(exc))
    except (ProtocolError, OSError, ValueError) as exc:
        logger.warning("node %s failed: %s", node_id, exc)
        if session.barrier_reached:
            session.abort(f"node {node_id} failed after the barrier: {exc}")
        _send_error(channel, str(exc))
    finally:
        channel.close()


def _send_error(channel, text):
    try:
        channel.send(error(text))
    except OSError:
        pass


class Coordinator:
    """TCP coordinator. Bind in the constructor, then call :meth:`serve`.

    Binding to port 0 picks a free port; read it back from :attr:`address`.
    """

    def __init__(self, listen, expected_workers, cfg, timeout=DEFAULT_TIMEOUT):
        host, port = parse_endpoint(listen) if isinstance(listen, str) else listen
        self.session = CoordinatorSession(expected_workers, cfg, timeout)
        self.timeout = timeout
        self._server = socket.create_server((host, port))
        self.address = self._server.getsockname()[:2]

    def serve(self):
        """Run one session. Returns ``(GlobalParams, SessionReport)``; raises :class:`SessionAborted`."""
        session = self.session
        threads = []
        try:
            while not session.barrier_reached and not session.finished:
                remaining = session.remaining()
                if remaining <= 0:
                    session.abort("timed out waiting for workers to connect")
                    break
                self._server.settimeout(min(0.1, remaining))
                try:
                    conn, _ = self._server.accept()
                except (socket.timeout, TimeoutError):
                    continue
                channel = SocketChannel(conn, self.timeout)
                t = threading.Thread(target=serve_node, args=(channel, session), daemon=True)
                t.start()
                threads.append(t)
            return session.wait_finished()
        finally:
            self._server.close()
            for t in threads:
                t.join(timeout=1.0)


def run_coordinator(listen, expected_workers, cfg, timeout=DEFAULT_TIMEOUT):
    return Coordinator(listen, expected_workers, cfg, timeout).serve()


def run_simulated(partitions, cfg, labels=None, timeout=DEFAULT_TIMEOUT, record=False):
    """Run a whole session in-process over memory channels.

    Returns ``(params, outputs, report)``; ``outputs[i]`` belongs to node ``i``.
    With ``record=True`` the report gains a ``traffic`` attribute listing every
    frame seen by the coordinator.
    """
    partitions = list(partitions)
    labels = list(labels) if labels is not None else [None] * len(partitions)
    session = CoordinatorSession(len(partitions), cfg, timeout)
    outputs = [None] * len(partitions)
    failures = {}
    coord_channels = []

    def _worker(i, channel):
        try:
            outputs[i] = worker_loop(channel, WorkerSession(i, partitions[i], cfg, labels[i]))
        except Exception as exc:
            failures[i] = exc

    threads = []
    for i in range(len(partitions)):
        coord_end, worker_end = channel_pair(timeout, record)
        coord_channels.append(coord_end)
        threads.append(threading.Thread(target=serve_node, args=(coord_end, session), daemon=True))
        threads.append(threading.Thread(target=_worker, args=(i, worker_end), daemon=True))
    for t in threads:
        t.start()
    try:
        params, report = session.wait_finished()
    finally:
        for t in threads:
            t.join(timeout=max(1.0, session.remaining()))
    if failures:
        i, exc = min(failures.items())
        raise exc
    if record:
        report.traffic = [frame for ch in coord_channels for frame in ch.traffic]
    return params, outputs, report
