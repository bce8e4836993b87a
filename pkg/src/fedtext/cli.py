"""``fedtext`` command line entry point."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from scipy.special import expit

from .experiment import (ConfigError, load_config, load_run_model, run_client_agent, run_experiment,
                         run_tokenizer_ablation)
from .flcore import BarrierTimeout, RoundAborted
from .seqnet import dataset_logits
from .synth import generate_synthetic_corpus
from .textproc import LABEL_NAMES, encode_texts
from .transport import FilesystemBackend, MemoryBackend, TransportServer, parse_address

DESK_CONFIG = """\
# Desk-scale federated run over the synthetic corpus.
mode: federated
seed: 0
output_dir: runs/desk
data:
  train: train.csv
  test: test.csv
  embeddings: embeddings.txt
  max_seq_len: 24
model:
  cell: gru
  embed_dim: 100
  recurrent_units: 32
  dense_units: 32
training:
  learning_rate: 0.01
  batch_size: 16
federation:
  rounds: 10
  clients: 5
  distribution: iid
"""


def _configure_logging():
    level = os.environ.get("FEDTEXT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _load(path, args=None):
    cfg = load_config(path)
    if args is not None and getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args.config, args)
    result = run_experiment(cfg, args.out)
    print(f"wrote {result.output_dir}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load(args.config, args)
    result = run_tokenizer_ablation(cfg, args.out)
    print(f"final accuracy  common {result.common[-1]:.4f}  per-client {result.per_client[-1]:.4f}"
          if result.common else "no rounds run")
    print(f"wrote {result.output_dir / 'ablation.csv'}")
    return 0


def cmd_synth(args) -> int:
    corpus = generate_synthetic_corpus(args.per_class, args.vocab_size, args.seed, args.out)
    config = Path(args.out) / "config.yaml"
    if not config.exists():
        config.write_text(DESK_CONFIG, encoding="utf-8")
    for path in (corpus.train_path, corpus.test_path, corpus.embeddings_path, config):
        print(path)
    return 0


def cmd_serve(args) -> int:
    backend = FilesystemBackend(args.root) if args.root else MemoryBackend()
    server = TransportServer(parse_address(args.addr), backend)
    print(f"serving on {server.address}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_client(args) -> int:
    cfg = load_config(args.config)
    run_client_agent(cfg, args.client_id, args.addr)
    return 0


def cmd_predict(args) -> int:
    run_dir = Path(args.model)
    if run_dir.is_file():
        run_dir = run_dir.parent
    params, vocab, embedding, arch = load_run_model(run_dir)
    scores = expit(dataset_logits(params, embedding, encode_texts(args.text, vocab, arch.max_seq_len)))
    for text, row in zip(args.text, scores):
        print(f"{LABEL_NAMES[int(np.argmax(row))]}\t{' '.join(f'{s:.3f}' for s in row)}\t{text}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedtext", description="Federated text classification experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a centralized or federated experiment")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate-tokenizer", help="common vs per-client tokenizer comparison")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="write a synthetic corpus and a starter config")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="serve the blob store and message board over TCP")
    p.add_argument("--addr", required=True, help="HOST:PORT (port 0 picks a free one)")
    p.add_argument("--root", help="persist to this directory instead of memory")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("client", help="join a networked federation as one client")
    p.add_argument("--addr", required=True)
    p.add_argument("--client-id", type=int, required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_client)

    p = sub.add_parser("predict", help="classify text with a trained model")
    p.add_argument("--model", required=True, help="final_model.ftxp (or its run directory)")
    p.add_argument("--text", required=True, action="append")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RoundAborted, BarrierTimeout) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error during {args.command}: {exc}", file=sys.stderr)
        return 1
    logging.getLogger(__name__).info("%s finished in %.1fs", args.command, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
