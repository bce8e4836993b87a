"""TCP service exposing a backend, and the matching client backend.

Framing, both directions: ``u32 length`` (little-endian, counts the rest of
the frame), then one byte (opcode in requests, status in responses), then the
payload.  One request per connection.

Request payloads::

    PUT   u16 key length, key, blob bytes
    GET   key
    POST  encoded message
    POLL  encoded filter

Response payloads: blob bytes (GET), one byte 1/0 for "added" (POST),
concatenated messages (POLL), nothing (PUT).  Errors carry a UTF-8 text.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading

from .backends import MemoryBackend, NotFound, TransportError
from .wire import MESSAGE_SIZE, BlobKey, MessageFilter, SyncMessage

log = logging.getLogger(__name__)

OP_PUT, OP_GET, OP_POST, OP_POLL = 1, 2, 3, 4
ST_OK, ST_NOT_FOUND, ST_ERROR = 0, 1, 2
_LEN = struct.Struct("<I")
MAX_FRAME = 1 << 30


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            raise ConnectionError(f"connection closed after {got} of {n} bytes")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def send_frame(sock: socket.socket, head: int, payload: bytes) -> None:
    sock.sendall(_LEN.pack(len(payload) + 1) + bytes([head]) + payload)


def recv_frame(sock: socket.socket) -> tuple[int, bytes]:
    (length,) = _LEN.unpack(_recv_exact(sock, 4))
    if length < 1 or length > MAX_FRAME:
        raise ConnectionError(f"bad frame length {length}")
    body = _recv_exact(sock, length)
    return body[0], body[1:]


def parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like HOST:PORT, got {addr!r}")
    return host, int(port)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        backend = self.server.backend
        try:
            op, payload = recv_frame(self.request)
        except (ConnectionError, OSError) as exc:
            log.warning("dropped malformed request: %s", exc)
            return
        try:
            if op == OP_PUT:
                (klen,) = struct.unpack_from("<H", payload)
                key = BlobKey.parse(payload[2:2 + klen].decode("utf-8"))
                backend.put(key, payload[2 + klen:])
                status, out = ST_OK, b""
            elif op == OP_GET:
                status, out = ST_OK, backend.get(BlobKey.parse(payload.decode("utf-8")))
            elif op == OP_POST:
                added = backend.post(SyncMessage.decode(payload))
                status, out = ST_OK, b"\x01" if added else b"\x00"
            elif op == OP_POLL:
                msgs = backend.poll(MessageFilter.decode(payload))
                status, out = ST_OK, b"".join(m.encode() for m in msgs)
            else:
                status, out = ST_ERROR, f"unknown opcode {op}".encode()
        except NotFound:
            status, out = ST_NOT_FOUND, b""
        except Exception as exc:  # reported back to the caller
            status, out = ST_ERROR, f"{type(exc).__name__}: {exc}".encode()
        try:
            send_frame(self.request, status, out)
        except OSError as exc:
            log.warning("could not send response: %s", exc)


class TransportServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], backend=None):
        super().__init__(address, _Handler)
        self.backend = backend if backend is not None else MemoryBackend()

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, name="transport-server", daemon=True)
        thread.start()
        return thread


class SocketBackend:
    """Client side of :class:`TransportServer`; same interface as the local backends."""

    def __init__(self, address: str, timeout: float = 30.0):
        self.host, self.port = parse_address(address)
        self.timeout = timeout

    def _call(self, op: int, payload: bytes) -> bytes:
        try:
            with socket.create_connection((self.host, self.port), timeout=self.timeout) as sock:
                send_frame(sock, op, payload)
                status, body = recv_frame(sock)
        except OSError as exc:
            raise TransportError(f"{self.host}:{self.port}: {exc}") from exc
        if status == ST_NOT_FOUND:
            raise NotFound(payload)
        if status != ST_OK:
            raise TransportError(body.decode("utf-8", "replace"))
        return body

    def put(self, key: BlobKey, data: bytes) -> None:
        raw = key.path().encode("utf-8")
        self._call(OP_PUT, struct.pack("<H", len(raw)) + raw + bytes(data))

    def get(self, key: BlobKey) -> bytes:
        try:
            return self._call(OP_GET, key.path().encode("utf-8"))
        except NotFound:
            raise NotFound(key) from None

    def post(self, msg: SyncMessage) -> bool:
        return self._call(OP_POST, msg.encode()) == b"\x01"

    def poll(self, flt: MessageFilter) -> list[SyncMessage]:
        body = self._call(OP_POLL, flt.encode())
        return [SyncMessage.decode(body[i:i + MESSAGE_SIZE]) for i in range(0, len(body), MESSAGE_SIZE)]
