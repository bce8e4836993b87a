"""Blob store + message board backends.

Every backend offers the same four calls on raw values:

* ``put(key, data)`` - last writer wins
* ``get(key)`` - raises :class:`NotFound` for absent keys
* ``post(msg)`` - append-only, returns False when (kind, round, sender) already exists
* ``poll(filter)`` - matching messages in posting order
"""

from __future__ import annotations

import fcntl
import os
import threading
from pathlib import Path

from .wire import MESSAGE_SIZE, BlobKey, MessageFilter, SyncMessage


class TransportError(RuntimeError):
    pass


class NotFound(KeyError):
    pass


class MemoryBackend:
    def __init__(self):
        self._blobs: dict[BlobKey, bytes] = {}
        self._board: list[SyncMessage] = []
        self._ids: set[tuple[int, int, int]] = set()
        self._lock = threading.Lock()

    def put(self, key: BlobKey, data: bytes) -> None:
        with self._lock:
            self._blobs[key] = bytes(data)

    def get(self, key: BlobKey) -> bytes:
        with self._lock:
            try:
                return self._blobs[key]
            except KeyError:
                raise NotFound(key) from None

    def post(self, msg: SyncMessage) -> bool:
        with self._lock:
            if msg.identity in self._ids:
                return False
            self._ids.add(msg.identity)
            self._board.append(msg)
            return True

    def poll(self, flt: MessageFilter) -> list[SyncMessage]:
        with self._lock:
            return [m for m in self._board if flt.matches(m)]


class FilesystemBackend:
    """One file per blob under ``root/blobs``; the board is ``root/board.bin``.

    Board records are fixed-size message encodings appended under an exclusive
    ``flock``, so several processes can share one root.
    """

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "blobs").mkdir(parents=True, exist_ok=True)
        self.board_path = self.root / "board.bin"
        self.board_path.touch(exist_ok=True)

    def _blob_path(self, key: BlobKey) -> Path:
        return self.root / "blobs" / f"{key.path()}.bin"

    def put(self, key: BlobKey, data: bytes) -> None:
        path = self._blob_path(key)
        tmp = path.with_suffix(f".tmp{os.getpid()}.{threading.get_ident()}")
        try:
            tmp.write_bytes(data)
            os.replace(tmp, path)
        except OSError as exc:
            raise TransportError(f"blob put {key.path()}: {exc}") from exc

    def get(self, key: BlobKey) -> bytes:
        try:
            return self._blob_path(key).read_bytes()
        except FileNotFoundError:
            raise NotFound(key) from None
        except OSError as exc:
            raise TransportError(f"blob get {key.path()}: {exc}") from exc

    @staticmethod
    def _records(raw: bytes) -> list[SyncMessage]:
        usable = len(raw) - len(raw) % MESSAGE_SIZE
        return [SyncMessage.decode(raw[i:i + MESSAGE_SIZE]) for i in range(0, usable, MESSAGE_SIZE)]

    def post(self, msg: SyncMessage) -> bool:
        try:
            with open(self.board_path, "r+b") as fh:
                fcntl.flock(fh, fcntl.LOCK_EX)
                try:
                    existing = self._records(fh.read())
                    if any(m.identity == msg.identity for m in existing):
                        return False
                    fh.seek(0, os.SEEK_END)
                    fh.write(msg.encode())
                    fh.flush()
                    os.fsync(fh.fileno())
                    return True
                finally:
                    fcntl.flock(fh, fcntl.LOCK_UN)
        except OSError as exc:
            raise TransportError(f"board post: {exc}") from exc

    def poll(self, flt: MessageFilter) -> list[SyncMessage]:
        try:
            with open(self.board_path, "rb") as fh:
                fcntl.flock(fh, fcntl.LOCK_SH)
                try:
                    raw = fh.read()
                finally:
                    fcntl.flock(fh, fcntl.LOCK_UN)
        except OSError as exc:
            raise TransportError(f"board poll: {exc}") from exc
        return [m for m in self._records(raw) if flt.matches(m)]
