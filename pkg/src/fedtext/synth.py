"""Desk-scale synthetic corpus: three keyword families over shared filler.

Every document mixes filler words with one or more marker words that belong
to its class only, so a marker-count classifier is exact.  The companion
word-vector file clusters each class's markers around a class centroid.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .textproc import LabeledDataset, tokenize, write_labeled_csv

NUM_CLASSES = 3


@dataclass(frozen=True)
class SyntheticCorpus:
    train_path: Path
    test_path: Path
    embeddings_path: Path
    markers: tuple[tuple[str, ...], ...]     # per class
    filler: tuple[str, ...]


def marker_words(markers_per_class: int) -> tuple[tuple[str, ...], ...]:
    prefixes = ("calm", "gloom", "abyss")
    return tuple(tuple(f"{prefixes[c]}{j}" for j in range(markers_per_class)) for c in range(NUM_CLASSES))


def _documents(rng, n_per_class, markers, filler, filler_p, length_range, marker_range):
    texts, labels = [], []
    for cls in range(NUM_CLASSES):
        for _ in range(n_per_class):
            length = int(rng.integers(length_range[0], length_range[1] + 1))
            n_mark = int(rng.integers(marker_range[0], marker_range[1] + 1))
            n_mark = min(n_mark, length)
            words = list(rng.choice(filler, size=length - n_mark, p=filler_p))
            for m in rng.choice(markers[cls], size=n_mark):
                words.insert(int(rng.integers(0, len(words) + 1)), str(m))
            texts.append(" ".join(words))
            labels.append(cls)
    order = rng.permutation(len(texts))
    return LabeledDataset([texts[i] for i in order], np.array(labels, dtype=np.int64)[order])


def generate_synthetic_corpus(n_per_class: int, vocab_size: int = 300, seed: int = 0, out_dir=".",
                              test_per_class: int | None = None, embed_dim: int = 100,
                              markers_per_class: int | None = None,
                              length_range=(8, 20), marker_range=(1, 3),
                              marker_spread: float = 0.5) -> SyntheticCorpus:
    """Write ``train.csv``, ``test.csv`` and ``embeddings.txt`` into ``out_dir``.

    ``vocab_size`` is the number of distinct generator words (markers plus
    filler).  The test split defaults to half the training size per class.
    ``marker_spread`` scales how far marker vectors scatter around their class
    centroid; larger values make unseen markers harder to place.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    markers_per_class = markers_per_class or max(1, vocab_size // 10)
    n_filler = vocab_size - NUM_CLASSES * markers_per_class
    if n_filler < 1:
        raise ValueError("vocab_size too small for the requested marker count")
    test_per_class = max(1, n_per_class // 2) if test_per_class is None else test_per_class

    rng = np.random.default_rng(seed)
    markers = marker_words(markers_per_class)
    filler = tuple(f"w{j}" for j in range(n_filler))
    zipf = 1.0 / np.arange(1, n_filler + 1)
    filler_p = zipf / zipf.sum()

    train = _documents(rng, n_per_class, markers, filler, filler_p, length_range, marker_range)
    test = _documents(rng, test_per_class, markers, filler, filler_p, length_range, marker_range)

    scale = 1.0 / np.sqrt(embed_dim)
    centroids = rng.normal(size=(NUM_CLASSES, embed_dim)) * scale * 2.0
    rows = []
    for cls in range(NUM_CLASSES):
        for word in markers[cls]:
            rows.append((word, centroids[cls] + rng.normal(size=embed_dim) * scale * marker_spread))
    for word in filler:
        rows.append((word, rng.normal(size=embed_dim) * scale))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_path, test_path, emb_path = out / "train.csv", out / "test.csv", out / "embeddings.txt"
    write_labeled_csv(train_path, train)
    write_labeled_csv(test_path, test)
    with open(emb_path, "w", encoding="utf-8", newline="\n") as fh:
        for word, vec in rows:
            fh.write(word + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")
    return SyntheticCorpus(train_path, test_path, emb_path, markers, filler)


def keyword_classify(text: str, markers) -> int:
    """Class with the most marker hits; the baseline the generator guarantees to be exact."""
    tokens = tokenize(text)
    hits = [sum(tokens.count(m) for m in family) for family in markers]
    return int(np.argmax(hits))


def inject_client_noise(texts: list[str], client_id: int, pool_size: int, per_text: int,
                        seed: int = 0) -> list[str]:
    """Insert ``per_text`` words from a pool private to ``client_id`` into every text."""
    if pool_size < 1 or per_text < 1:
        return list(texts)
    rng = np.random.default_rng([seed, client_id])
    pool = [f"noise{client_id}x{j}" for j in range(pool_size)]
    out = []
    for text in texts:
        words = text.split()
        for w in rng.choice(pool, size=per_text):
            words.insert(int(rng.integers(0, len(words) + 1)), str(w))
        out.append(" ".join(words))
    return out
