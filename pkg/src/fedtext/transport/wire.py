"""Binary encodings: model parameters and board messages.

Parameter payload, all integers little-endian::

    b"FTXP" | version u16 | layer count u16 |
    per layer: name length u16, UTF-8 name, rank u8, dims u32 * rank, values row-major

Version 1 stores values as float32; version 2 stores float64 (lossless, used
when runs must be reproduced bit-for-bit against in-memory training).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from ..seqnet import ArchitectureSpec, ModelParameters

MAGIC = b"FTXP"
VERSION_F32 = 1
VERSION_F64 = 2
_DTYPES = {VERSION_F32: np.dtype("<f4"), VERSION_F64: np.dtype("<f8")}


class WireFormatError(ValueError):
    pass


def serialize_params(params: ModelParameters, version: int = VERSION_F32) -> bytes:
    if version not in _DTYPES:
        raise ValueError(f"unsupported wire version {version}")
    dtype = _DTYPES[version]
    out = [MAGIC, struct.pack("<HH", version, len(params))]
    for name, tensor in params:
        if not np.isfinite(tensor).all():
            raise WireFormatError(f"layer {name!r} contains non-finite values")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", tensor.ndim))
        out.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        out.append(np.ascontiguousarray(tensor, dtype=dtype).tobytes())
    return b"".join(out)


def payload_size(arch: ArchitectureSpec, version: int = VERSION_F32) -> int:
    """Exact serialized size for an architecture, without building tensors."""
    size = 8
    for name, shape in arch.layer_shapes():
        n = 1
        for d in shape:
            n *= d
        size += 2 + len(name.encode("utf-8")) + 1 + 4 * len(shape) + _DTYPES[version].itemsize * n
    return size


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise WireFormatError(f"truncated payload: needed {n} bytes at offset {self.pos}, "
                                  f"{len(self.data) - self.pos} left")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize_params(data: bytes, arch: ArchitectureSpec) -> ModelParameters:
    r = _Reader(data)
    if bytes(r.take(4)) != MAGIC:
        raise WireFormatError("bad magic")
    version, count = r.unpack("<HH")
    if version not in _DTYPES:
        raise WireFormatError(f"unsupported version {version}")
    dtype = _DTYPES[version]
    expected = arch.layer_shapes()
    if count != len(expected):
        raise WireFormatError(f"layer count {count} does not match {arch.cell_kind} layout ({len(expected)})")
    layers = {}
    for exp_name, exp_shape in expected:
        (nlen,) = r.unpack("<H")
        name = bytes(r.take(nlen)).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        if name != exp_name or tuple(shape) != exp_shape:
            raise WireFormatError(f"shape mismatch: got {name!r} {tuple(shape)}, expected {exp_name!r} {exp_shape}")
        n = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(r.take(n * dtype.itemsize), dtype=dtype)
        layers[name] = values.astype(np.float64).reshape(shape)
    if r.pos != len(r.data):
        raise WireFormatError(f"{len(r.data) - r.pos} trailing bytes after payload")
    return ModelParameters(arch, layers)


class MessageKind(enum.IntEnum):
    CLIENT_DONE = 1
    GLOBAL_PUBLISHED = 2


SERVER = -1
_MSG = struct.Struct("<BIiQ")
MESSAGE_SIZE = _MSG.size


@dataclass(frozen=True)
class SyncMessage:
    kind: MessageKind
    round: int
    sender: int             # client id, or SERVER
    timestamp: int = 0      # ms since epoch

    @property
    def identity(self) -> tuple[int, int, int]:
        return (int(self.kind), self.round, self.sender)

    def encode(self) -> bytes:
        return _MSG.pack(int(self.kind), self.round, self.sender, self.timestamp)

    @classmethod
    def decode(cls, data: bytes) -> SyncMessage:
        if len(data) != MESSAGE_SIZE:
            raise WireFormatError(f"message must be {MESSAGE_SIZE} bytes, got {len(data)}")
        kind, rnd, sender, ts = _MSG.unpack(data)
        return cls(MessageKind(kind), rnd, sender, ts)


@dataclass(frozen=True)
class MessageFilter:
    kind: MessageKind | None = None
    round: int | None = None
    sender: int | None = None

    def matches(self, msg: SyncMessage) -> bool:
        return ((self.kind is None or msg.kind == self.kind)
                and (self.round is None or msg.round == self.round)
                and (self.sender is None or msg.sender == self.sender))

    _ANY = -2
    _FMT = struct.Struct("<Bii")

    def encode(self) -> bytes:
        return self._FMT.pack(0 if self.kind is None else int(self.kind),
                              self._ANY if self.round is None else self.round,
                              self._ANY if self.sender is None else self.sender)

    @classmethod
    def decode(cls, data: bytes) -> MessageFilter:
        kind, rnd, sender = cls._FMT.unpack(data)
        return cls(None if kind == 0 else MessageKind(kind),
                   None if rnd == cls._ANY else rnd,
                   None if sender == cls._ANY else sender)


class Namespace(enum.Enum):
    GLOBAL = "global"
    LOCAL = "local"


@dataclass(frozen=True)
class BlobKey:
    namespace: Namespace
    round: int
    client_id: int | None = None

    def __post_init__(self):
        if (self.namespace is Namespace.LOCAL) != (self.client_id is not None):
            raise ValueError("local keys carry a client id, global keys do not")

    @classmethod
    def global_(cls, round: int) -> BlobKey:
        return cls(Namespace.GLOBAL, round)

    @classmethod
    def local(cls, round: int, client_id: int) -> BlobKey:
        return cls(Namespace.LOCAL, round, client_id)

    def path(self) -> str:
        if self.client_id is None:
            return f"{self.namespace.value}-r{self.round:05d}"
        return f"{self.namespace.value}-r{self.round:05d}-c{self.client_id:04d}"

    @classmethod
    def parse(cls, text: str) -> BlobKey:
        parts = text.split("-")
        ns = Namespace(parts[0])
        rnd = int(parts[1][1:])
        client = int(parts[2][1:]) if len(parts) > 2 else None
        return cls(ns, rnd, client)
