"""Shared tokenizer, vocabulary, padding and frozen word-vector table."""

from __future__ import annotations

import csv
import json
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
LABEL_NAMES = ("not depressed", "moderately depressed", "severely depressed")
FALLBACK_SEED = 0
FALLBACK_RANGE = 0.05


class EmbeddingFormatError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip punctuation from token edges."""
    tokens = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and _is_punct(raw[start]):
            start += 1
        while end > start and _is_punct(raw[end - 1]):
            end -= 1
        if start < end:
            tokens.append(raw[start:end])
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    token_to_id: dict[str, int] = field(compare=False, repr=False)

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[:2] != (PAD_TOKEN, UNK_TOKEN):
            raise ValueError("vocabulary must start with the PAD and UNK tokens")
        mapping = {t: i for i, t in enumerate(tokens)}
        if len(mapping) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(list(self.tokens), ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocabulary:
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocab(corpus: Iterable[str], max_size: int = 20_000) -> Vocabulary:
    """Most frequent tokens first; equal counts keep first-occurrence order."""
    if max_size < 2:
        raise ValueError("max_size must leave room for PAD and UNK")
    counts: Counter[str] = Counter()
    seen = 0
    for text in corpus:
        counts.update(tokenize(text))
        seen += 1
    if seen == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts.pop(PAD_TOKEN, None)
    counts.pop(UNK_TOKEN, None)
    # Counter preserves insertion order and sorted() is stable
    ranked = sorted(counts, key=lambda t: -counts[t])
    return Vocabulary([PAD_TOKEN, UNK_TOKEN] + ranked[:max_size - 2])


def encode_and_pad(text: str, vocab: Vocabulary, max_seq_len: int = 100) -> np.ndarray:
    ids = [vocab.id(t) for t in tokenize(text)[:max_seq_len]]
    out = np.zeros(max_seq_len, dtype=np.int64)
    out[:len(ids)] = ids
    return out


def encode_texts(texts: Sequence[str], vocab: Vocabulary, max_seq_len: int = 100) -> np.ndarray:
    out = np.zeros((len(texts), max_seq_len), dtype=np.int64)
    for i, text in enumerate(texts):
        out[i] = encode_and_pad(text, vocab, max_seq_len)
    return out


@dataclass(frozen=True)
class EmbeddingMatrix:
    vectors: np.ndarray
    coverage: float = 1.0

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError("embedding table must be 2-d")
        if not np.isfinite(vectors).all():
            raise ValueError("embedding table contains non-finite values")
        if vectors.shape[0] and np.any(vectors[PAD] != 0):
            raise ValueError("PAD row must be all zeros")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def embed_dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


def read_word_vectors(path, embed_dim: int = 100, wanted=None) -> dict[str, np.ndarray]:
    """Parse a whitespace-separated word-vector text file.

    Only words in ``wanted`` are kept when it is given; every line is still
    validated.  The first occurrence of a word wins.
    """
    found: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip("\r").split(" ")
            if parts == [""]:
                continue
            if len(parts) != embed_dim + 1:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected a word and {embed_dim} values, got {len(parts) - 1} values")
            word = parts[0]
            if word in found or (wanted is not None and word not in wanted):
                continue
            try:
                vec = np.array(parts[1:], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}:{lineno}: {exc}") from None
            if not np.isfinite(vec).all():
                raise EmbeddingFormatError(f"{path}:{lineno}: non-finite value")
            found[word] = vec
    return found


def load_embeddings(path, vocab: Vocabulary, embed_dim: int = 100,
                    seed: int = FALLBACK_SEED) -> EmbeddingMatrix:
    """Build the frozen id -> vector table for ``vocab`` from a word-vector file.

    Words missing from the file get a seeded uniform vector in +-0.05; the PAD
    row is zero.  ``coverage`` is the fraction of real (non PAD/UNK) vocabulary
    words found in the file.
    """
    found = read_word_vectors(path, embed_dim, wanted=vocab.token_to_id)
    rng = np.random.default_rng(seed)
    table = rng.uniform(-FALLBACK_RANGE, FALLBACK_RANGE, size=(len(vocab), embed_dim))
    for word, vec in found.items():
        table[vocab.token_to_id[word]] = vec
    table[PAD] = 0.0
    real = len(vocab) - 2
    hits = sum(1 for w in found if vocab.token_to_id[w] >= 2)
    coverage = hits / real if real else 0.0
    log.info("embedding coverage %.3f (%d/%d words)", coverage, hits, real)
    return EmbeddingMatrix(table, coverage)


def nearest_neighbor(word: str, embedding: EmbeddingMatrix, vocab: Vocabulary, k: int = 1):
    """Top-``k`` vocabulary words by cosine similarity, excluding the query, PAD and UNK."""
    if word not in vocab or vocab.token_to_id[word] < 2:
        raise KeyError(f"word {word!r} is not in the vocabulary")
    return _neighbors(vocab.token_to_id[word], embedding.vectors, vocab, k)


def _unit_rows(vectors):
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)


def _neighbors(qid, vectors, vocab, k, unit=None):
    unit = _unit_rows(vectors) if unit is None else unit
    sims = unit @ unit[qid]
    candidates = np.array([i for i in range(2, len(vocab)) if i != qid], dtype=np.int64)
    if candidates.size == 0:
        return []
    order = np.lexsort((candidates, -sims[candidates]))[:k]
    return [(vocab.tokens[candidates[i]], float(sims[candidates[i]])) for i in order]


# ---------------------------------------------------------------------------
# labelled text

@dataclass
class LabeledDataset:
    texts: list[str]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.texts) != self.labels.size:
            raise ValueError("texts and labels differ in length")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 2):
            raise ValueError("labels must be in {0, 1, 2}")

    def __len__(self) -> int:
        return len(self.texts)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=3)


def parse_label(value: str) -> int:
    norm = " ".join(value.strip().lower().replace("_", " ").replace("-", " ").split())
    if norm in ("0", "1", "2"):
        return int(norm)
    if norm in LABEL_NAMES:
        return LABEL_NAMES.index(norm)
    raise KeyError(value)


def read_labeled_csv(path) -> LabeledDataset:
    """Read a ``text,label`` CSV; labels are class names or 0-2."""
    texts, labels = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        except csv.Error as exc:
            raise DatasetFormatError(f"{path}: row 1: {exc}") from None
        if [h.strip().lower() for h in header] != ["text", "label"]:
            raise DatasetFormatError(f"{path}: header must be 'text,label', got {header!r}")
        while True:
            try:
                row = next(reader)
            except StopIteration:
                break
            except csv.Error as exc:
                raise DatasetFormatError(f"{path}: row {reader.line_num}: {exc}") from None
            rownum = reader.line_num
            if not row:
                continue
            if len(row) != 2:
                raise DatasetFormatError(f"{path}: row {rownum}: expected 2 fields, got {len(row)}")
            text, label = row
            try:
                labels.append(parse_label(label))
            except KeyError:
                raise DatasetFormatError(f"{path}: row {rownum}: unknown label {label!r}") from None
            if not tokenize(text):
                raise DatasetFormatError(f"{path}: row {rownum}: text is empty after normalization")
            texts.append(text)
    if not texts:
        raise DatasetFormatError(f"{path}: no data rows")
    return LabeledDataset(texts, np.array(labels, dtype=np.int64))


def write_labeled_csv(path, dataset: LabeledDataset) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["text", "label"])
        for text, label in zip(dataset.texts, dataset.labels):
            writer.writerow([text, int(label)])


def augment_balance(dataset: LabeledDataset, embedding: EmbeddingMatrix, vocab: Vocabulary,
                    sub_prob: float = 0.15, seed: int = 0,
                    min_similarity: float = 0.6) -> LabeledDataset:
    """Oversample minority classes with word-substituted copies of their own samples.

    Each token of a copied sample is replaced, with probability ``sub_prob``,
    by its nearest embedding neighbour if the cosine similarity reaches
    ``min_similarity``.  Every class ends up with the majority count.
    """
    counts = dataset.class_counts()
    if np.any(counts == 0):
        raise ValueError(f"every class needs at least one sample, got counts {counts.tolist()}")
    target = counts.max()
    if np.all(counts == target):
        return LabeledDataset(list(dataset.texts), dataset.labels.copy())

    rng = np.random.default_rng(seed)
    unit = _unit_rows(embedding.vectors)
    cache: dict[int, str | None] = {}

    def substitute(token):
        tid = vocab.token_to_id.get(token, UNK)
        if tid < 2:
            return None
        if tid not in cache:
            best = _neighbors(tid, embedding.vectors, vocab, 1, unit)
            cache[tid] = best[0][0] if best and best[0][1] >= min_similarity else None
        return cache[tid]

    texts, labels = list(dataset.texts), list(dataset.labels)
    for cls in range(3):
        members = np.flatnonzero(dataset.labels == cls)
        for src in rng.choice(members, size=target - counts[cls]):
            text = dataset.texts[src]
            tokens = tokenize(text)
            changed = False
            for j, tok in enumerate(tokens):
                if sub_prob > 0 and rng.random() < sub_prob:
                    repl = substitute(tok)
                    if repl is not None:
                        tokens[j], changed = repl, True
            texts.append(" ".join(tokens) if changed else text)
            labels.append(cls)
    return LabeledDataset(texts, np.array(labels, dtype=np.int64))
