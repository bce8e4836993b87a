"""Model payloads, the blob store, the message board and byte accounting.

The same protocol runs on three interchangeable backends: in process, on a
shared directory and over TCP.
"""
import tempfile

from fedtext.seqnet import ArchitectureSpec, init_parameters
from fedtext.transport import (SERVER, BlobKey, CommLedger, Endpoint, FilesystemBackend, MemoryBackend,
                               MessageFilter, MessageKind, SocketBackend, SyncMessage, TransportServer,
                               deserialize_params, ledger_report, payload_size, serialize_params)

for kind in ("rnn", "gru", "lstm"):
    print(f"{kind:>4} payload: {payload_size(ArchitectureSpec(kind)) / 1e6:.2f} MB")

arch = ArchitectureSpec("gru", 10, 4, 4, max_seq_len=6)
params = init_parameters(arch, 0)
blob = serialize_params(params)
print("header bytes:", blob[:8], "round trip equal (f32):",
      abs(deserialize_params(blob, arch).flat() - params.flat()).max() < 1e-6)

server = TransportServer(("127.0.0.1", 0), MemoryBackend())
server.start_background()
backends = {"memory": MemoryBackend(), "filesystem": FilesystemBackend(tempfile.mkdtemp()),
            "socket": SocketBackend(server.address)}
for name, backend in backends.items():
    backend.put(BlobKey.global_(1), blob)
    backend.post(SyncMessage(MessageKind.GLOBAL_PUBLISHED, 1, SERVER, 0))
    seen = backend.poll(MessageFilter(MessageKind.GLOBAL_PUBLISHED, 1))
    print(f"{name:>10}: stored {len(backend.get(BlobKey.global_(1)))} bytes, board has {len(seen)} message(s)")
server.shutdown()
server.server_close()

# Endpoints book every byte they move.  A client that polls before the global
# model appears pays a fixed overhead per empty poll.
ledger = CommLedger()
store = MemoryBackend()
srv = Endpoint(store, "server", ledger, round=1)
cli = Endpoint(store, "client-0", ledger, round=1)
empty = cli.poll(MessageFilter(MessageKind.GLOBAL_PUBLISHED, 1))
srv.put(BlobKey.global_(1), blob)
srv.post(SyncMessage(MessageKind.GLOBAL_PUBLISHED, 1, SERVER, 0))
cli.poll(MessageFilter(MessageKind.GLOBAL_PUBLISHED, 1))
cli.get(BlobKey.global_(1))
for row in ledger_report(ledger).rows:
    print(row)
