"""Parameter exchange and synchronization messages between server and clients."""

from .backends import FilesystemBackend, MemoryBackend, NotFound, TransportError
from .ledger import POLL_OVERHEAD, STORE, CommLedger, Endpoint, LedgerReport, ledger_report
from .sockets import SocketBackend, TransportServer, parse_address
from .wire import (MESSAGE_SIZE, SERVER, VERSION_F32, VERSION_F64, BlobKey, MessageFilter,
                   MessageKind, Namespace, SyncMessage, WireFormatError, deserialize_params,
                   payload_size, serialize_params)

__all__ = [
    "BlobKey", "CommLedger", "Endpoint", "FilesystemBackend", "LedgerReport", "MESSAGE_SIZE",
    "MemoryBackend", "MessageFilter", "MessageKind", "Namespace", "NotFound", "POLL_OVERHEAD",
    "SERVER", "STORE", "SocketBackend", "SyncMessage", "TransportError", "TransportServer",
    "VERSION_F32", "VERSION_F64", "WireFormatError", "deserialize_params", "ledger_report",
    "parse_address", "payload_size", "serialize_params",
]
