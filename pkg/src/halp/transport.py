"""Reliable ordered transports between node pairs.

Two implementations of the same contract (send a frame, receive a frame,
no loss or reorder): an in-process queue pair for deterministic tests, and
a TCP stream carrying the binary frame encoding for real deployments. The
in-process transport can be rate-limited so exchange timing resembles a
throughput-bound link.
"""

from __future__ import annotations

import queue
import socket
import threading
import time

from .framing import (
    HEADER,
    Frame,
    FrameError,
    deserialize_frame,
    payload_length,
    serialize_frame,
)


class TransportError(RuntimeError):
    pass


class TransportTimeout(TransportError):
    pass


class TransportClosed(TransportError):
    pass


class InProcTransport:
    """One endpoint of a bidirectional in-process channel."""

    def __init__(self, send_q: queue.Queue, recv_q: queue.Queue, rate_mbps: float | None = None):
        self._send_q = send_q
        self._recv_q = recv_q
        self._rate = rate_mbps

    def send(self, frame: Frame) -> None:
        if self._rate:
            bits = len(serialize_frame(frame)) * 8
            time.sleep(bits / (self._rate * 1e6))
        self._send_q.put(frame)

    def receive(self, timeout: float | None = None) -> Frame:
        try:
            item = self._recv_q.get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout(f"no frame within {timeout} s") from None
        if item is None:
            raise TransportClosed("peer closed the channel")
        return item

    def close(self) -> None:
        self._send_q.put(None)


def inproc_pair(rate_mbps: float | None = None) -> tuple[InProcTransport, InProcTransport]:
    a_to_b: queue.Queue = queue.Queue()
    b_to_a: queue.Queue = queue.Queue()
    return (
        InProcTransport(a_to_b, b_to_a, rate_mbps),
        InProcTransport(b_to_a, a_to_b, rate_mbps),
    )


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    chunks = []
    got = 0
    while got < n:
        part = sock.recv(n - got)
        if not part:
            return None
        chunks.append(part)
        got += len(part)
    return b"".join(chunks)


class SocketTransport:
    """Frame stream over a connected TCP socket.

    A reader thread drains the socket into an internal queue so senders are
    never blocked by a peer that has not asked for the frame yet.
    """

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._queue: queue.Queue = queue.Queue()
        self._send_lock = threading.Lock()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            while True:
                header = _recv_exact(self._sock, HEADER.size)
                if header is None:
                    break
                payload = _recv_exact(self._sock, payload_length(header))
                if payload is None:
                    break
                self._queue.put(deserialize_frame(header + payload))
        except (OSError, FrameError) as exc:
            self._queue.put(exc)
            return
        self._queue.put(None)

    def send(self, frame: Frame) -> None:
        data = serialize_frame(frame)
        try:
            with self._send_lock:
                self._sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def receive(self, timeout: float | None = None) -> Frame:
        try:
            item = self._queue.get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout(f"no frame within {timeout} s") from None
        if item is None:
            raise TransportClosed("peer closed the connection")
        if isinstance(item, Exception):
            raise TransportError(f"receive failed: {item}")
        return item

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def connect(address: str, timeout: float = 30.0) -> SocketTransport:
    host, port = address.rsplit(":", 1)
    sock = socket.create_connection((host, int(port)), timeout=timeout)
    sock.settimeout(None)
    return SocketTransport(sock)


def listen_one(address: str, timeout: float = 30.0) -> SocketTransport:
    """Accept a single inbound connection on host:port."""
    host, port = address.rsplit(":", 1)
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind((host, int(port)))
    server.listen(1)
    server.settimeout(timeout)
    try:
        sock, _ = server.accept()
    except socket.timeout:
        raise TransportTimeout(f"no connection on {address} within {timeout} s") from None
    finally:
        server.close()
    sock.settimeout(None)
    return SocketTransport(sock)
