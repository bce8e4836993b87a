"""Bytes and milliseconds per round for the three cell types."""
import tempfile

from fedtext.datashard import encode_dataset
from fedtext.flcore import FederationConfig, run_federation
from fedtext.seqnet import ArchitectureSpec
from fedtext.synth import generate_synthetic_corpus
from fedtext.textproc import build_vocab, load_embeddings, read_labeled_csv
from fedtext.transport import ledger_report

files = generate_synthetic_corpus(100, seed=0, out_dir=tempfile.mkdtemp())
train, test = read_labeled_csv(files.train_path), read_labeled_csv(files.test_path)
vocab = build_vocab(train.texts)
emb = load_embeddings(files.embeddings_path, vocab)

print(f"{'cell':>5} {'train ms':>9} {'infer us':>9} {'client tx MB':>13} {'client rx MB':>13} {'server rx MB':>13}")
for kind in ("rnn", "gru", "lstm"):
    arch = ArchitectureSpec(kind, 100, 128, 64, max_seq_len=40)
    cfg = FederationConfig(rounds=2, arch=arch, learning_rate=0.01, batch_size=32)
    fed = run_federation(cfg, encode_dataset(train, vocab, 40), encode_dataset(test, vocab, 40), emb)
    prof = fed.history[-1].profile
    avg = ledger_report(fed.ledger, rounds=[1, 2]).averages
    print(f"{kind:>5} {prof.training_ms:9.1f} {prof.inference_us_per_sample:9.1f} "
          f"{avg['client-0']['tx'] / 1e6:13.3f} {avg['client-0']['rx'] / 1e6:13.3f} {avg['server']['rx'] / 1e6:13.3f}")
