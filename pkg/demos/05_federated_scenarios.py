"""Four federation scenarios on the synthetic corpus.

IID or class-skewed shards, with all five clients or with client 2 held out.
The network is scaled down so each run takes a couple of seconds.
"""
import tempfile

from fedtext.datashard import ShardPlan, encode_dataset
from fedtext.flcore import FederationConfig, run_federation
from fedtext.seqnet import ArchitectureSpec
from fedtext.synth import generate_synthetic_corpus
from fedtext.textproc import build_vocab, load_embeddings, read_labeled_csv

files = generate_synthetic_corpus(200, seed=0, out_dir=tempfile.mkdtemp())
train, test = read_labeled_csv(files.train_path), read_labeled_csv(files.test_path)
vocab = build_vocab(train.texts)
emb = load_embeddings(files.embeddings_path, vocab)
arch = ArchitectureSpec("gru", 100, 32, 32, max_seq_len=24)
train_ids, test_ids = encode_dataset(train, vocab, 24), encode_dataset(test, vocab, 24)

scenarios = {"iid, all": (ShardPlan.iid(5), None), "iid, drop 2": (ShardPlan.iid(5), 2),
             "skewed, all": (ShardPlan.table1(), None), "skewed, drop 2": (ShardPlan.table1(), 2)}
for name, (plan, drop) in scenarios.items():
    cfg = FederationConfig(rounds=6, arch=arch, learning_rate=0.01, batch_size=16, drop_client=drop,
                           profile_inference=False, track_objective=True)
    fed = run_federation(cfg, train_ids, test_ids, emb, plan=plan)
    curve = " ".join(f"{r.global_metrics.accuracy:.2f}" for r in fed.history)
    last = fed.history[-1]
    print(f"{name:>15}: accuracy by round {curve} | objective {last.objective:.3f} "
          f"| macro P/R {last.global_metrics.macro_precision:.2f}/{last.global_metrics.macro_recall:.2f}")
