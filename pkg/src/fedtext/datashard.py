"""Loading labelled data and splitting it into per-client shards."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .textproc import LabeledDataset, Vocabulary, encode_texts, read_labeled_csv

NUM_CLASSES = 3

# rows are clients, columns are class ids (not, moderate, severe)
TABLE1_PERCENT = np.array([
    [10, 10, 40],
    [40, 10, 10],
    [10, 40, 10],
    [20, 30, 10],
    [20, 10, 30],
], dtype=np.float64)


@dataclass
class EncodedDataset:
    token_ids: np.ndarray       # (n, max_seq_len)
    labels: np.ndarray          # (n,)
    texts: list[str]
    sample_ids: np.ndarray      # (n,)

    def __len__(self) -> int:
        return self.labels.size

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)

    def subset(self, index) -> EncodedDataset:
        index = np.asarray(index, dtype=np.int64)
        return EncodedDataset(self.token_ids[index], self.labels[index],
                              [self.texts[i] for i in index], self.sample_ids[index])


def encode_dataset(dataset: LabeledDataset, vocab: Vocabulary, max_seq_len: int = 100) -> EncodedDataset:
    return EncodedDataset(encode_texts(dataset.texts, vocab, max_seq_len), dataset.labels.copy(),
                          list(dataset.texts), np.arange(len(dataset), dtype=np.int64))


def load_dataset(path, vocab: Vocabulary, max_seq_len: int = 100) -> EncodedDataset:
    return encode_dataset(read_labeled_csv(path), vocab, max_seq_len)


@dataclass
class ClientShard:
    client_id: int
    data: EncodedDataset

    @property
    def token_ids(self) -> np.ndarray:
        return self.data.token_ids

    @property
    def labels(self) -> np.ndarray:
        return self.data.labels

    @property
    def sample_ids(self) -> np.ndarray:
        return self.data.sample_ids

    @property
    def class_counts(self) -> np.ndarray:
        return self.data.class_counts()

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class ShardPlan:
    """How to split a dataset: ``"iid"`` over ``n_clients``, or a clients x classes proportion matrix."""

    mode: str
    n_clients: int
    proportions: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("iid", "noniid"):
            raise ValueError(f"unknown shard mode {self.mode!r}")
        if self.n_clients < 1:
            raise ValueError("n_clients must be at least 1")
        if self.mode == "noniid":
            p = np.asarray(self.proportions, dtype=np.float64)
            if p.ndim != 2 or p.shape != (self.n_clients, NUM_CLASSES):
                raise ValueError(f"proportion matrix must be {self.n_clients} x {NUM_CLASSES}, got {p.shape}")
            if not np.isfinite(p).all() or np.any(p < 0) or np.any(p > 1):
                raise ValueError("proportions must lie in [0, 1]")
            bad = np.flatnonzero(np.abs(p.sum(axis=0) - 1.0) > 1e-9)
            if bad.size:
                raise ValueError(f"proportion columns {bad.tolist()} do not sum to 1")
            object.__setattr__(self, "proportions", p)

    @classmethod
    def iid(cls, n_clients: int) -> ShardPlan:
        return cls("iid", n_clients)

    @classmethod
    def from_percentages(cls, table) -> ShardPlan:
        p = np.asarray(table, dtype=np.float64) / 100.0
        return cls("noniid", p.shape[0], p)

    @classmethod
    def table1(cls) -> ShardPlan:
        return cls.from_percentages(TABLE1_PERCENT)


def _check_clients(n_clients):
    if n_clients < 1:
        raise ValueError("n_clients must be at least 1")


def split_iid(dataset: EncodedDataset, n_clients: int, seed: int = 0) -> list[ClientShard]:
    """Shuffle each class and deal it round-robin, client 0 first."""
    _check_clients(n_clients)
    rng = np.random.default_rng(seed)
    parts = [[] for _ in range(n_clients)]
    for cls in range(NUM_CLASSES):
        members = rng.permutation(np.flatnonzero(dataset.labels == cls))
        for c in range(n_clients):
            parts[c].append(members[c::n_clients])
    return _make_shards(dataset, parts)


def largest_remainder(fractions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts proportional to ``fractions`` that sum exactly to ``total``.

    Leftover units go to the largest fractional parts, lower index first on ties.
    """
    raw = np.asarray(fractions, dtype=np.float64) * total
    counts = np.floor(raw + 1e-9).astype(np.int64)
    rest = total - counts.sum()
    while rest < 0:
        i = int(np.argmax(counts))
        counts[i] -= 1
        rest += 1
    if rest > 0:
        remainder = raw - counts
        order = sorted(range(len(raw)), key=lambda i: (-round(remainder[i], 12), i))
        for i in order[:rest]:
            counts[i] += 1
    return counts


def split_noniid(dataset: EncodedDataset, plan: ShardPlan, seed: int = 0) -> list[ClientShard]:
    """Shuffle each class and cut it into contiguous runs sized by the plan's column."""
    if plan.mode != "noniid":
        raise ValueError("split_noniid needs a proportion-matrix plan")
    rng = np.random.default_rng(seed)
    parts = [[] for _ in range(plan.n_clients)]
    for cls in range(NUM_CLASSES):
        members = rng.permutation(np.flatnonzero(dataset.labels == cls))
        counts = largest_remainder(plan.proportions[:, cls], members.size)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for c in range(plan.n_clients):
            parts[c].append(members[bounds[c]:bounds[c + 1]])
    return _make_shards(dataset, parts)


def make_shards(dataset: EncodedDataset, plan: ShardPlan, seed: int = 0) -> list[ClientShard]:
    if plan.mode == "iid":
        return split_iid(dataset, plan.n_clients, seed)
    return split_noniid(dataset, plan, seed)


def _make_shards(dataset, parts):
    shards = []
    for c, pieces in enumerate(parts):
        index = np.sort(np.concatenate(pieces)) if pieces else np.zeros(0, dtype=np.int64)
        shards.append(ClientShard(c, dataset.subset(index)))
    return shards


@dataclass(frozen=True)
class ImbalanceReport:
    data_imbalanced: bool
    class_imbalanced: bool
    proportions: np.ndarray     # shards x classes, each row a shard's class mix


def imbalance_report(shards: list[ClientShard], tol: float = 1e-9) -> ImbalanceReport:
    """Flag size imbalance (unequal shard sizes) and class imbalance (unequal class mixes)."""
    sizes = np.array([len(s) for s in shards])
    counts = np.array([s.class_counts for s in shards], dtype=np.float64).reshape(-1, NUM_CLASSES)
    props = np.divide(counts, sizes[:, None], out=np.zeros_like(counts), where=sizes[:, None] > 0)
    data_imb = bool(sizes.size > 1 and np.any(sizes != sizes[0]))
    class_imb = bool(props.shape[0] > 1 and np.any(np.abs(props - props[0]) > tol))
    return ImbalanceReport(data_imb, class_imb, props)
