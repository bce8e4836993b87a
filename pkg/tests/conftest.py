import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fedtext.datashard import encode_dataset  # noqa: E402
from fedtext.seqnet import ArchitectureSpec  # noqa: E402
from fedtext.synth import generate_synthetic_corpus  # noqa: E402
from fedtext.textproc import build_vocab, load_embeddings, read_labeled_csv  # noqa: E402

# reduced network used wherever a run has to finish in seconds
DESK = dict(embed_dim=100, recurrent_units=32, dense_units=32, max_seq_len=24)


def desk_arch(kind="gru", **kw) -> ArchitectureSpec:
    return ArchitectureSpec(kind, **{**DESK, **kw})


class Corpus:
    def __init__(self, root: Path, n_per_class: int = 200, seed: int = 0, **kw):
        self.files = generate_synthetic_corpus(n_per_class, seed=seed, out_dir=root, **kw)
        self.train_raw = read_labeled_csv(self.files.train_path)
        self.test_raw = read_labeled_csv(self.files.test_path)
        self.vocab = build_vocab(self.train_raw.texts)
        self.embedding = load_embeddings(self.files.embeddings_path, self.vocab)
        self.train = encode_dataset(self.train_raw, self.vocab, DESK["max_seq_len"])
        self.test = encode_dataset(self.test_raw, self.vocab, DESK["max_seq_len"])


@pytest.fixture(scope="session")
def corpus(tmp_path_factory) -> Corpus:
    return Corpus(tmp_path_factory.mktemp("synth"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
