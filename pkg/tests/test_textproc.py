import itertools
import unicodedata

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedtext.textproc import (PAD_TOKEN, UNK_TOKEN, DatasetFormatError, EmbeddingFormatError, EmbeddingMatrix,
                              LabeledDataset, Vocabulary, augment_balance, build_vocab, encode_and_pad,
                              encode_texts, load_embeddings, nearest_neighbor, parse_label, read_labeled_csv,
                              tokenize, write_labeled_csv)

words = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=40)


# -- tokenizer ------------------------------------------------------------------

def test_tokenize_examples():
    assert tokenize("I feel SAD.") == ["i", "feel", "sad"]
    assert tokenize("") == []
    assert tokenize("don't stop...now") == ["don't", "stop...now"]
    assert tokenize('  "hello",   (world)! ') == ["hello", "world"]
    assert tokenize("... !!") == []


@settings(max_examples=200)
@given(words)
def test_tokens_are_lowercase_and_trimmed(text):
    for tok in tokenize(text):
        assert tok and tok == tok.lower()
        assert not (unicodedata.category(tok[0]).startswith("P") or unicodedata.category(tok[-1]).startswith("P"))
        assert not any(c.isspace() for c in tok)
        assert tokenize(tok) == [tok]


# -- vocabulary -----------------------------------------------------------------

def test_build_vocab_frequency_order():
    v = build_vocab(["a b", "a"])
    assert v.tokens == (PAD_TOKEN, UNK_TOKEN, "a", "b")
    assert build_vocab(["a b", "a"], max_size=3).tokens == (PAD_TOKEN, UNK_TOKEN, "a")


def test_build_vocab_ties_keep_first_occurrence():
    assert build_vocab(["z y x", "x y z"]).tokens[2:] == ("z", "y", "x")


def test_build_vocab_deterministic():
    corpus = ["the cat sat", "on the mat", "the end"]
    assert build_vocab(corpus) == build_vocab(list(corpus))


@settings(max_examples=100)
@given(st.lists(words, min_size=1, max_size=10), st.integers(2, 30))
def test_vocab_ids_are_a_bijection(corpus, cap):
    v = build_vocab(corpus, cap)
    assert len(v) <= cap
    assert sorted(v.token_to_id.values()) == list(range(len(v)))
    assert all(v.tokens[v.id(t)] == t for t in v.tokens)


def test_vocab_save_load(tmp_path):
    v = build_vocab(["ünïcode words here", "words"])
    v.save(tmp_path / "v.json")
    assert Vocabulary.load(tmp_path / "v.json") == v


def test_vocab_requires_special_tokens():
    with pytest.raises(ValueError):
        Vocabulary(["a", "b"])


# -- encoding ---------------------------------------------------------------------

def test_encode_example():
    v = Vocabulary([PAD_TOKEN, UNK_TOKEN, "i", "feel", "sad"])
    ids = encode_and_pad("I feel very sad", v)
    assert ids[:4].tolist() == [2, 3, 1, 4]
    assert ids.size == 100 and np.count_nonzero(ids[4:]) == 0


def test_encode_empty_and_truncation():
    v = build_vocab([" ".join(f"w{i}" for i in range(150))])
    assert not encode_and_pad("", v).any()
    long = " ".join(f"w{i}" for i in range(150))
    assert encode_and_pad(long, v).tolist() == [v.id(f"w{i}") for i in range(100)]


@settings(max_examples=100)
@given(words, st.integers(1, 20))
def test_encoding_length_and_purity(text, L):
    v = build_vocab(["some shared words", text or "x"])
    a, b = encode_and_pad(text, v, L), encode_and_pad(text, v, L)
    assert a.shape == (L,) and np.array_equal(a, b)


def test_encode_texts_stacks_rows():
    v = build_vocab(["a b c"])
    out = encode_texts(["a", "b c"], v, 4)
    assert out.tolist() == [[v.id("a"), 0, 0, 0], [v.id("b"), v.id("c"), 0, 0]]


# -- embeddings -------------------------------------------------------------------

def write_vectors(path, rows, dim=100):
    with open(path, "w", encoding="utf-8") as fh:
        for word, vec in rows:
            fh.write(word + " " + " ".join(repr(float(x)) for x in vec[:dim]) + "\n")


def test_load_embeddings_copies_rows(tmp_path):
    vec = np.linspace(-1, 1, 100)
    write_vectors(tmp_path / "e.txt", [("sad", vec), ("other", np.ones(100))])
    v = Vocabulary([PAD_TOKEN, UNK_TOKEN, "sad", "missing"])
    emb = load_embeddings(tmp_path / "e.txt", v)
    np.testing.assert_array_equal(emb.vectors[2], vec)
    assert not emb.vectors[0].any()
    assert emb.coverage == pytest.approx(0.5)
    again = load_embeddings(tmp_path / "e.txt", v)
    np.testing.assert_array_equal(emb.vectors[3], again.vectors[3])
    assert np.abs(emb.vectors[3]).max() <= 0.05


def test_load_embeddings_names_bad_line(tmp_path):
    write_vectors(tmp_path / "e.txt", [("ok", np.ones(100))])
    with open(tmp_path / "e.txt", "a") as fh:
        fh.write("bad " + " ".join(["0.1"] * 99) + "\n")
    with pytest.raises(EmbeddingFormatError, match=":2:"):
        load_embeddings(tmp_path / "e.txt", build_vocab(["ok"]))


def test_embedding_matrix_is_frozen(tmp_path):
    write_vectors(tmp_path / "e.txt", [("a", np.ones(100))])
    emb = load_embeddings(tmp_path / "e.txt", build_vocab(["a"]))
    with pytest.raises(ValueError):
        emb.vectors[2, 0] = 5.0


def test_embedding_matrix_rejects_nonzero_pad():
    with pytest.raises(ValueError):
        EmbeddingMatrix(np.ones((3, 2)))


def _table(rows):
    v = Vocabulary([PAD_TOKEN, UNK_TOKEN] + [w for w, _ in rows])
    vecs = np.zeros((len(v), len(rows[0][1])))
    for i, (_, vec) in enumerate(rows):
        vecs[i + 2] = vec
    return v, EmbeddingMatrix(vecs)


def test_nearest_neighbor_identical_and_orthogonal():
    v, emb = _table([("u", [1.0, 0.0]), ("same", [1.0, 0.0]), ("orth", [0.0, 1.0])])
    best = nearest_neighbor("u", emb, v, 2)
    assert best[0] == ("same", pytest.approx(1.0))
    assert best[1] == ("orth", pytest.approx(0.0))


def test_nearest_neighbor_matches_exhaustive_ranking(rng):
    names = ["a", "b", "c", "d", "e"]
    v, emb = _table([(n, rng.normal(size=4)) for n in names])
    for q in names:
        qv = emb.vectors[v.id(q)]
        brute = []
        for other in names:
            if other == q:
                continue
            ov = emb.vectors[v.id(other)]
            brute.append((other, float(qv @ ov / np.linalg.norm(qv) / np.linalg.norm(ov))))
        brute.sort(key=lambda t: -t[1])
        got = nearest_neighbor(q, emb, v, 4)
        assert [w for w, _ in got] == [w for w, _ in brute]
        np.testing.assert_allclose([s for _, s in got], [s for _, s in brute], atol=1e-12)


def test_nearest_neighbor_unknown_word():
    v, emb = _table([("a", [1.0, 0.0])])
    with pytest.raises(KeyError):
        nearest_neighbor("zzz", emb, v, 1)


# -- labelled CSV ---------------------------------------------------------------

def test_parse_label_variants():
    assert parse_label("2") == 2
    assert parse_label("Not Depressed") == 0
    assert parse_label("moderately_depressed") == 1
    with pytest.raises(KeyError):
        parse_label("severe")


def test_csv_round_trip_with_quotes(tmp_path):
    ds = LabeledDataset(['she said "hi", then left', "line\nbreak", "plain"], [0, 1, 2])
    write_labeled_csv(tmp_path / "d.csv", ds)
    back = read_labeled_csv(tmp_path / "d.csv")
    assert back.texts == ds.texts and back.labels.tolist() == [0, 1, 2]


def test_csv_unknown_label_names_row(tmp_path):
    (tmp_path / "d.csv").write_text("text,label\nfine,0\nbad row,severe\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError, match="row 3"):
        read_labeled_csv(tmp_path / "d.csv")


def test_csv_bad_header(tmp_path):
    (tmp_path / "d.csv").write_text("body,class\nx,0\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        read_labeled_csv(tmp_path / "d.csv")


# -- augmentation ---------------------------------------------------------------

@pytest.fixture
def aug_setup():
    v, emb = _table([("happy", [1.0, 0.1]), ("glad", [1.0, 0.12]), ("sad", [-1.0, 0.3]), ("blue", [0.0, 1.0])])
    return v, emb


def test_augment_balanced_is_unchanged(aug_setup):
    v, emb = aug_setup
    ds = LabeledDataset(["happy", "sad", "blue"], [0, 1, 2])
    out = augment_balance(ds, emb, v)
    assert out.texts == ds.texts and out.labels.tolist() == [0, 1, 2]


def test_augment_reaches_majority_count(aug_setup):
    v, emb = aug_setup
    ds = LabeledDataset(["happy day"] * 10 + ["sad"] * 5 + ["blue"] * 5, [0] * 10 + [1] * 5 + [2] * 5)
    out = augment_balance(ds, emb, v, sub_prob=0.5, seed=3)
    assert out.class_counts().tolist() == [10, 10, 10]
    assert out.texts[:20] == ds.texts


def test_augment_without_substitution_duplicates(aug_setup):
    v, emb = aug_setup
    ds = LabeledDataset(["happy", "happy", "sad here", "blue sky"], [0, 0, 1, 2])
    out = augment_balance(ds, emb, v, sub_prob=0.0)
    for text, label in zip(out.texts[4:], out.labels[4:]):
        assert text in [t for t, y in zip(ds.texts, ds.labels) if y == label]


def test_augment_substitutes_close_neighbours(aug_setup):
    v, emb = aug_setup
    ds = LabeledDataset(["happy happy happy"] + ["sad"] * 3 + ["blue"] * 3, [0] + [1] * 3 + [2] * 3)
    out = augment_balance(ds, emb, v, sub_prob=1.0, seed=0)
    assert "glad glad glad" in out.texts[7:]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=3, max_size=25), st.floats(0, 1), st.integers(0, 100))
def test_augment_never_loses_or_relabels(labels, p, seed):
    labels = labels + [0, 1, 2]
    vocab_words = ["happy", "glad", "sad", "blue"]
    v, emb = _table([(w, vec) for w, vec in zip(vocab_words, [[1, .1], [1, .12], [-1, .3], [0, 1]])])
    texts = [" ".join(itertools.islice(itertools.cycle(vocab_words), i % 4, i % 4 + 3)) for i in range(len(labels))]
    ds = LabeledDataset(texts, labels)
    out = augment_balance(ds, emb, v, sub_prob=p, seed=seed)
    assert np.all(out.class_counts() >= ds.class_counts())
    assert out.texts[:len(ds)] == ds.texts and out.labels[:len(ds)].tolist() == ds.labels.tolist()
    assert len(set(out.class_counts().tolist())) == 1
