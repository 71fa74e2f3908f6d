"""Byte transports under the control protocol.

Two interchangeable implementations move the same ``type | body`` message
bytes: a TCP transport for multi-process sessions and an in-memory queue
transport for single-process sessions.  Because both carry identical
bytes, a session's observable behavior does not depend on which one is
underneath.
"""

from __future__ import annotations

import queue
import socket
import struct
from typing import Optional

from .errors import ProtocolError, TransportError, TransportTimeout
from .protocol import MAX_MESSAGE

_LEN = struct.Struct("<I")


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise TransportError(f"endpoint must look like host:port, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise TransportError(f"bad port in endpoint {text!r}") from None


class Connection:
    """One end of a control stream; carries ``type | body`` messages."""

    def send_message(self, body: bytes) -> None:
        raise NotImplementedError

    def recv_message(self, timeout: Optional[float] = None) -> Optional[bytes]:
        """Next message, or None once the peer has closed cleanly."""
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class MemoryConnection(Connection):
    def __init__(self, inbox: "queue.Queue", outbox: "queue.Queue"):
        self._inbox = inbox
        self._outbox = outbox
        self._eof = False
        self._closed = False

    def send_message(self, body: bytes) -> None:
        if self._closed:
            raise TransportError("connection is closed")
        self._outbox.put(body)

    def recv_message(self, timeout: Optional[float] = None) -> Optional[bytes]:
        if self._eof:
            return None
        try:
            body = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout("no message within deadline") from None
        if body is None:
            self._eof = True
            return None
        return body

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(None)


class MemoryHub:
    """Rendezvous for in-process sessions: clients connect, the server accepts."""

    def __init__(self):
        self._pending: "queue.Queue" = queue.Queue()
        self._closed = False

    def connect(self) -> MemoryConnection:
        if self._closed:
            raise TransportError("hub is closed")
        c2s: "queue.Queue" = queue.Queue()
        s2c: "queue.Queue" = queue.Queue()
        self._pending.put(MemoryConnection(inbox=c2s, outbox=s2c))
        return MemoryConnection(inbox=s2c, outbox=c2s)

    # server side
    def accept(self, timeout: Optional[float] = None) -> MemoryConnection:
        try:
            return self._pending.get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeout("no client connected within deadline") from None

    def close(self) -> None:
        self._closed = True


class TcpConnection(Connection):
    def __init__(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock

    def send_message(self, body: bytes) -> None:
        try:
            self._sock.sendall(_LEN.pack(len(body)) + body)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _recv_exact(self, n: int, timeout: Optional[float], at_boundary: bool) -> Optional[bytes]:
        self._sock.settimeout(timeout)
        chunks = []
        got = 0
        while got < n:
            try:
                chunk = self._sock.recv(n - got)
            except socket.timeout:
                raise TransportTimeout("no message within deadline") from None
            except OSError as exc:
                raise TransportError(f"recv failed: {exc}") from exc
            if not chunk:
                if at_boundary and got == 0:
                    return None
                raise TransportError("connection closed mid-message")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def recv_message(self, timeout: Optional[float] = None) -> Optional[bytes]:
        head = self._recv_exact(4, timeout, at_boundary=True)
        if head is None:
            return None
        (length,) = _LEN.unpack(head)
        if not 0 < length <= MAX_MESSAGE:
            raise ProtocolError(f"message length {length} out of range")
        body = self._recv_exact(length, timeout, at_boundary=False)
        return body

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class TcpServer:
    """Listening socket handing out TcpConnections; binds immediately."""

    def __init__(self, endpoint: str):
        host, port = parse_endpoint(endpoint)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((host, port))
            self._sock.listen(16)
        except OSError as exc:
            self._sock.close()
            raise TransportError(f"cannot listen on {endpoint}: {exc}") from exc

    @property
    def port(self) -> int:
        return self._sock.getsockname()[1]

    @property
    def endpoint(self) -> str:
        host, port = self._sock.getsockname()[:2]
        return f"{host}:{port}"

    def accept(self, timeout: Optional[float] = None) -> TcpConnection:
        self._sock.settimeout(timeout)
        try:
            conn, _addr = self._sock.accept()
        except socket.timeout:
            raise TransportTimeout("no client connected within deadline") from None
        except OSError as exc:
            raise TransportError(f"accept failed: {exc}") from exc
        return TcpConnection(conn)

    def close(self) -> None:
        self._sock.close()


def tcp_connect(endpoint: str) -> TcpConnection:
    host, port = parse_endpoint(endpoint)
    try:
        sock = socket.create_connection((host, port), timeout=30.0)
    except OSError as exc:
        raise TransportError(f"cannot connect to {endpoint}: {exc}") from exc
    sock.settimeout(None)
    return TcpConnection(sock)
