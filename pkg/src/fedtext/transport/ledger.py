"""Byte-exact communication accounting."""

from __future__ import annotations

import threading
from collections import defaultdict
from dataclasses import dataclass

from .backends import NotFound
from .wire import BlobKey, MessageFilter, SyncMessage

POLL_OVERHEAD = 128
STORE = "store"
MB = 1_000_000


@dataclass
class Traffic:
    transmitted: int = 0
    received: int = 0
    polls: int = 0
    poll_overhead: int = 0

    def as_dict(self) -> dict:
        return {"tx": self.transmitted, "rx": self.received, "polls": self.polls,
                "poll_overhead": self.poll_overhead}


class CommLedger:
    """Counters per (round, endpoint).  Safe to share between threads."""

    def __init__(self):
        self._rows: dict[tuple[int, str], Traffic] = defaultdict(Traffic)
        self._lock = threading.Lock()

    def record(self, round: int, endpoint: str, tx: int = 0, rx: int = 0,
               polls: int = 0, overhead: int = 0) -> None:
        with self._lock:
            row = self._rows[(round, endpoint)]
            row.transmitted += tx
            row.received += rx
            row.polls += polls
            row.poll_overhead += overhead

    def rows(self) -> list[tuple[int, str, Traffic]]:
        with self._lock:
            return [(r, e, Traffic(**vars(t))) for (r, e), t in sorted(self._rows.items())]

    def round_rows(self, round: int) -> dict[str, Traffic]:
        return {e: t for r, e, t in self.rows() if r == round}

    def rounds(self) -> list[int]:
        return sorted({r for r, _, _ in self.rows()})

    def endpoints(self) -> list[str]:
        return sorted({e for _, e, _ in self.rows()})

    def __bool__(self) -> bool:
        return bool(self._rows)


class Endpoint:
    """A named participant's view of a backend; every call is charged to the ledger.

    Both sides of each transfer are recorded: the caller and the ``store``
    endpoint.  An empty poll additionally charges the caller a fixed
    ``POLL_OVERHEAD`` received bytes.  Set ``round`` to choose which round
    subsequent traffic is booked under.
    """

    def __init__(self, backend, name: str, ledger: CommLedger | None = None, round: int = 0):
        self.backend = backend
        self.name = name
        self.ledger = ledger if ledger is not None else CommLedger()
        self.round = round

    def _book(self, **kw):
        self.ledger.record(self.round, self.name, **kw)

    def _book_store(self, **kw):
        self.ledger.record(self.round, STORE, **kw)

    def put(self, key: BlobKey, data: bytes) -> None:
        self.backend.put(key, data)
        self._book(tx=len(data))
        self._book_store(rx=len(data))

    def get(self, key: BlobKey) -> bytes:
        data = self.backend.get(key)
        self._book(rx=len(data))
        self._book_store(tx=len(data))
        return data

    def try_get(self, key: BlobKey) -> bytes | None:
        try:
            return self.get(key)
        except NotFound:
            return None

    def post(self, msg: SyncMessage) -> bool:
        added = self.backend.post(msg)
        size = len(msg.encode())
        self._book(tx=size)
        self._book_store(rx=size)
        return added

    def poll(self, flt: MessageFilter) -> list[SyncMessage]:
        msgs = self.backend.poll(flt)
        size = sum(len(m.encode()) for m in msgs)
        if msgs:
            self._book(rx=size, polls=1)
            self._book_store(tx=size)
        else:
            self._book(rx=POLL_OVERHEAD, polls=1, overhead=POLL_OVERHEAD)
        return msgs


@dataclass
class LedgerReport:
    rows: list[dict]            # one per (round, endpoint)
    totals: dict[str, dict]     # per endpoint
    averages: dict[str, dict]   # per endpoint, per round in which it appeared


def ledger_report(ledger: CommLedger, rounds: list[int] | None = None) -> LedgerReport:
    """Per-round, per-endpoint byte summary; MB are 10**6 bytes.

    ``rounds`` restricts the averages and totals (e.g. to exclude the setup
    round 0); by default all booked rounds count.
    """
    rows, totals, seen = [], {}, defaultdict(set)
    for r, endpoint, t in ledger.rows():
        rows.append({"round": r, "endpoint": endpoint, **t.as_dict(),
                     "tx_mb": t.transmitted / MB, "rx_mb": t.received / MB})
        if rounds is not None and r not in rounds:
            continue
        acc = totals.setdefault(endpoint, {"tx": 0, "rx": 0, "polls": 0, "poll_overhead": 0})
        for k, v in t.as_dict().items():
            acc[k] += v
        seen[endpoint].add(r)
    averages = {}
    for endpoint, acc in totals.items():
        n = len(seen[endpoint])
        acc["tx_mb"], acc["rx_mb"] = acc["tx"] / MB, acc["rx"] / MB
        averages[endpoint] = {"tx": acc["tx"] / n, "rx": acc["rx"] / n,
                              "tx_mb": acc["tx"] / n / MB, "rx_mb": acc["rx"] / n / MB,
                              "polls": acc["polls"] / n}
    return LedgerReport(rows, totals, averages)
