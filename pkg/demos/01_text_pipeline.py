"""From raw CSV to padded id matrices and an embedding table.

A small synthetic corpus stands in for real posts.  Three word families mark
the three classes and everything else is Zipf-distributed filler.
"""
import tempfile
from pathlib import Path

from fedtext.synth import generate_synthetic_corpus, keyword_classify
from fedtext.textproc import (LabeledDataset, augment_balance, build_vocab, encode_and_pad, load_embeddings, nearest_neighbor,
                              read_labeled_csv, tokenize)

work = Path(tempfile.mkdtemp(prefix="fedtext-demo-"))
corpus = generate_synthetic_corpus(100, seed=0, out_dir=work)
train = read_labeled_csv(corpus.train_path)
print(f"{len(train)} training posts, class counts {train.class_counts().tolist()}")
print("first post:", train.texts[0])

# The keyword baseline is exact by construction, so the corpus is learnable.
hits = sum(keyword_classify(t, corpus.markers) == y for t, y in zip(train.texts, train.labels))
print(f"keyword baseline: {hits}/{len(train)}")

print(tokenize("I can't SLEEP... again!"))

vocab = build_vocab(train.texts, max_size=200)
print(f"vocabulary: {len(vocab)} entries, id 0 = {vocab.tokens[0]!r}, id 1 = {vocab.tokens[1]!r}")
print("encoded:", encode_and_pad(train.texts[0], vocab, max_seq_len=12).tolist())

emb = load_embeddings(corpus.embeddings_path, vocab)
print(f"embedding table {emb.vectors.shape}, {emb.coverage:.0%} of the vocabulary found a pretrained vector")
print("neighbours of calm0:", nearest_neighbor("calm0", emb, vocab, k=3))

# Oversampling by neighbour substitution evens out a skewed training set.
keep = [i for i, y in enumerate(train.labels) if y != 2 or i % 4 == 0]
skewed = LabeledDataset([train.texts[i] for i in keep], train.labels[keep])
balanced = augment_balance(skewed, emb, vocab, sub_prob=0.3, seed=1)
print("before augmentation", skewed.class_counts().tolist(), "after", balanced.class_counts().tolist())
