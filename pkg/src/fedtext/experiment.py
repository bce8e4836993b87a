"""Experiment configuration and runners behind the ``fedtext`` command."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .datashard import ClientShard, EncodedDataset, ShardPlan, encode_dataset, make_shards
from .flcore import (ClientWorker, Federation, FederationConfig, RoundRecord, TestSet, run_centralized,
                     select_clients)
from .seqnet import ArchitectureSpec, ModelParameters
from .synth import inject_client_noise
from .textproc import (LabeledDataset, Vocabulary, augment_balance, build_vocab, encode_texts,
                       load_embeddings, read_labeled_csv)
from .transport import (VERSION_F32, VERSION_F64, CommLedger, Endpoint, FilesystemBackend,
                        MemoryBackend, SocketBackend, ledger_report, parse_address, serialize_params)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass
class ModelSection:
    cell: str = "gru"
    embed_dim: int = 100
    recurrent_units: int = 400
    dense_units: int = 300
    dropout: float = 0.25


@dataclass
class DataSection:
    train: str = ""
    test: str = ""
    embeddings: str = ""
    tokenizer_corpus: str | None = None
    vocab: str | None = None
    vocab_size: int = 20_000
    max_seq_len: int = 100


@dataclass
class TrainingSection:
    learning_rate: float = 1e-3
    batch_size: int = 32
    local_epochs: int = 1
    epochs: int | None = None           # centralized mode; defaults to federation.rounds


@dataclass
class FederationSection:
    rounds: int = 10
    clients: int = 5
    participants: int | None = None
    drop_client: int | None = None
    distribution: Any = "iid"           # "iid", "table1" or a clients x 3 percentage table
    tokenizer: str = "common"           # "common" or "per_client"
    barrier_timeout: float = 300.0
    poll_interval: float = 0.5
    wire: str = "f32"                   # "f32" or "f64"
    track_objective: bool = False
    profile_inference: bool = True
    noise_pool: int = 0                 # per-client private noise words (0 disables)
    noise_per_text: int = 0


@dataclass
class AugmentationSection:
    enabled: bool = False
    sub_prob: float = 0.15
    min_similarity: float = 0.6


@dataclass
class TransportSection:
    backend: str = "memory"             # "memory", "filesystem" or "socket"
    root: str | None = None
    address: str | None = None
    local_clients: bool = True


@dataclass
class ExperimentConfig:
    mode: str = "federated"
    seed: int = 0
    output_dir: str = "runs/experiment"
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    federation: FederationSection = field(default_factory=FederationSection)
    augmentation: AugmentationSection = field(default_factory=AugmentationSection)
    transport: TransportSection = field(default_factory=TransportSection)

    def arch(self) -> ArchitectureSpec:
        m = self.model
        return ArchitectureSpec(m.cell, m.embed_dim, m.recurrent_units, m.dense_units, 3, m.dropout,
                                self.data.max_seq_len)

    def federation_config(self, **overrides) -> FederationConfig:
        f, t = self.federation, self.training
        kw = dict(rounds=f.rounds, n_clients=f.clients, participants=f.participants,
                  learning_rate=t.learning_rate, batch_size=t.batch_size, local_epochs=t.local_epochs,
                  arch=self.arch(), drop_client=f.drop_client, seed=self.seed,
                  barrier_timeout=f.barrier_timeout, poll_interval=f.poll_interval,
                  wire_version=VERSION_F64 if f.wire == "f64" else VERSION_F32,
                  profile_inference=f.profile_inference, track_objective=f.track_objective)
        kw.update(overrides)
        return FederationConfig(**kw)

    def shard_plan(self) -> ShardPlan:
        dist = self.federation.distribution
        if dist == "iid":
            return ShardPlan.iid(self.federation.clients)
        if dist == "table1":
            return ShardPlan.table1()
        return ShardPlan.from_percentages(dist)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"data": DataSection, "model": ModelSection, "training": TrainingSection,
             "federation": FederationSection, "augmentation": AugmentationSection,
             "transport": TransportSection}


def _build(cls, raw: dict, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(prefix or "<root>", "expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"{prefix}{key}", "unknown key")
    kw = {}
    for key, value in raw.items():
        if prefix == "" and key in _SECTIONS:
            kw[key] = _build(_SECTIONS[key], value if value is not None else {}, f"{key}.")
        else:
            kw[key] = value
    return cls(**kw)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate(cfg: ExperimentConfig, base_dir: Path | None = None, check_paths: bool = True) -> ExperimentConfig:
    """Check every field; raise :class:`ConfigError` naming the first bad one.

    Relative paths are resolved against ``base_dir``.
    """
    def need(ok, name, msg):
        if not ok:
            raise ConfigError(name, msg)

    need(cfg.mode in ("federated", "centralized"), "mode", "must be 'federated' or 'centralized'")
    need(_is_int(cfg.seed), "seed", "must be an integer")
    need(isinstance(cfg.output_dir, str) and cfg.output_dir, "output_dir", "must be a non-empty path")

    d = cfg.data
    for name in ("train", "test", "embeddings"):
        need(isinstance(getattr(d, name), str) and getattr(d, name), f"data.{name}", "path is required")
    for name in ("tokenizer_corpus", "vocab"):
        need(getattr(d, name) is None or isinstance(getattr(d, name), str), f"data.{name}", "must be a path")
    need(not (d.tokenizer_corpus and d.vocab), "data.vocab", "give either tokenizer_corpus or vocab, not both")
    need(_is_int(d.vocab_size) and d.vocab_size >= 3, "data.vocab_size", "must be an integer >= 3")
    need(_is_int(d.max_seq_len) and d.max_seq_len >= 1, "data.max_seq_len", "must be a positive integer")

    m = cfg.model
    need(isinstance(m.cell, str) and m.cell.lower() in ("rnn", "gru", "lstm"), "model.cell",
         "must be one of rnn, gru, lstm")
    for name in ("embed_dim", "recurrent_units", "dense_units"):
        need(_is_int(getattr(m, name)) and getattr(m, name) >= 1, f"model.{name}", "must be a positive integer")
    need(_is_num(m.dropout) and 0 <= m.dropout < 1, "model.dropout", "must be in [0, 1)")

    t = cfg.training
    need(_is_num(t.learning_rate) and t.learning_rate >= 0, "training.learning_rate", "must be non-negative")
    need(_is_int(t.batch_size) and t.batch_size >= 1, "training.batch_size", "must be a positive integer")
    need(_is_int(t.local_epochs) and t.local_epochs >= 1, "training.local_epochs", "must be a positive integer")
    need(t.epochs is None or (_is_int(t.epochs) and t.epochs >= 0), "training.epochs",
         "must be a non-negative integer")

    f = cfg.federation
    need(_is_int(f.rounds) and f.rounds >= 0, "federation.rounds", "must be a non-negative integer")
    need(_is_int(f.clients) and f.clients >= 1, "federation.clients", "must be a positive integer")
    need(f.drop_client is None or (_is_int(f.drop_client) and 0 <= f.drop_client < f.clients),
         "federation.drop_client", f"must be a client id in [0, {f.clients})")
    k_max = f.clients - (f.drop_client is not None)
    need(f.participants is None or (_is_int(f.participants) and 1 <= f.participants <= k_max
                                    and (f.drop_client is None or f.participants == k_max)),
         "federation.participants", f"must be in [1, {k_max}] (exactly {k_max} with a dropped client)")
    need(f.tokenizer in ("common", "per_client"), "federation.tokenizer", "must be 'common' or 'per_client'")
    need(f.tokenizer == "common" or cfg.mode == "federated", "federation.tokenizer",
         "per_client tokenizers need federated mode")
    need(f.wire in ("f32", "f64"), "federation.wire", "must be 'f32' or 'f64'")
    need(_is_num(f.barrier_timeout) and f.barrier_timeout >= 0, "federation.barrier_timeout",
         "must be non-negative")
    need(_is_num(f.poll_interval) and f.poll_interval >= 0, "federation.poll_interval", "must be non-negative")
    need(isinstance(f.track_objective, bool), "federation.track_objective", "must be true or false")
    need(isinstance(f.profile_inference, bool), "federation.profile_inference", "must be true or false")
    need(_is_int(f.noise_pool) and f.noise_pool >= 0, "federation.noise_pool", "must be a non-negative integer")
    need(_is_int(f.noise_per_text) and f.noise_per_text >= 0, "federation.noise_per_text",
         "must be a non-negative integer")
    if cfg.mode == "federated":
        try:
            plan = cfg.shard_plan()
        except (ValueError, TypeError) as exc:
            raise ConfigError("federation.distribution", f"must be 'iid', 'table1' or a percentage table ({exc})")
        need(plan.n_clients == f.clients, "federation.distribution",
             f"plan has {plan.n_clients} clients but federation.clients is {f.clients}")

    a = cfg.augmentation
    need(isinstance(a.enabled, bool), "augmentation.enabled", "must be true or false")
    need(_is_num(a.sub_prob) and 0 <= a.sub_prob <= 1, "augmentation.sub_prob", "must be in [0, 1]")
    need(_is_num(a.min_similarity) and -1 <= a.min_similarity <= 1, "augmentation.min_similarity",
         "must be in [-1, 1]")

    tr = cfg.transport
    need(tr.backend in ("memory", "filesystem", "socket"), "transport.backend",
         "must be memory, filesystem or socket")
    need(tr.backend != "filesystem" or isinstance(tr.root, str), "transport.root",
         "required for the filesystem backend")
    if tr.backend == "socket":
        need(isinstance(tr.address, str), "transport.address", "required for the socket backend")
        try:
            parse_address(tr.address)
        except ValueError as exc:
            raise ConfigError("transport.address", str(exc))
    need(isinstance(tr.local_clients, bool), "transport.local_clients", "must be true or false")
    need(tr.local_clients or tr.backend != "memory", "transport.local_clients",
         "external clients need a filesystem or socket backend")

    if base_dir is not None:
        def resolve(p):
            return None if p is None else str((base_dir / p) if not Path(p).is_absolute() else Path(p))
        d.train, d.test, d.embeddings = resolve(d.train), resolve(d.test), resolve(d.embeddings)
        d.tokenizer_corpus, d.vocab = resolve(d.tokenizer_corpus), resolve(d.vocab)
        cfg.output_dir = resolve(cfg.output_dir)
        if tr.root is not None:
            tr.root = resolve(tr.root)
    if check_paths:
        for name in ("train", "test", "embeddings", "tokenizer_corpus", "vocab"):
            p = getattr(d, name)
            need(p is None or Path(p).is_file(), f"data.{name}", f"file not found: {p}")
    return cfg


def config_from_dict(raw: dict, base_dir=None, check_paths: bool = True) -> ExperimentConfig:
    try:
        cfg = _build(ExperimentConfig, raw, "")
    except TypeError as exc:
        raise ConfigError("<root>", str(exc)) from None
    return validate(cfg, Path(base_dir) if base_dir is not None else None, check_paths)


def load_config(path, check_paths: bool = True) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("<file>", str(exc)) from None
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return config_from_dict(raw if raw is not None else {}, path.parent, check_paths)


# ---------------------------------------------------------------------------
# data preparation

@dataclass
class Prepared:
    train_raw: LabeledDataset
    test_raw: LabeledDataset
    vocab: Vocabulary
    embedding: Any
    train: EncodedDataset
    test: EncodedDataset
    prepare_ms: float


def _corpus_texts(path: str) -> list[str]:
    if path.lower().endswith(".csv"):
        return read_labeled_csv(path).texts
    return [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def common_vocab(cfg: ExperimentConfig, train_texts) -> Vocabulary:
    d = cfg.data
    if d.vocab:
        return Vocabulary.load(d.vocab)
    corpus = _corpus_texts(d.tokenizer_corpus) if d.tokenizer_corpus else train_texts
    return build_vocab(corpus, d.vocab_size)


def prepare(cfg: ExperimentConfig) -> Prepared:
    tick = time.perf_counter()
    d = cfg.data
    train_raw, test_raw = read_labeled_csv(d.train), read_labeled_csv(d.test)
    vocab = common_vocab(cfg, train_raw.texts)
    embedding = load_embeddings(d.embeddings, vocab, cfg.model.embed_dim)
    if cfg.augmentation.enabled:
        a = cfg.augmentation
        train_raw = augment_balance(train_raw, embedding, vocab, a.sub_prob, cfg.seed, a.min_similarity)
    train = encode_dataset(train_raw, vocab, d.max_seq_len)
    test = encode_dataset(test_raw, vocab, d.max_seq_len)
    return Prepared(train_raw, test_raw, vocab, embedding, train, test,
                    (time.perf_counter() - tick) * 1000.0)


def _client_views(cfg: ExperimentConfig, prep: Prepared, shards: list[ClientShard]):
    """Per-client shards, embeddings and test views, honouring noise and tokenizer mode."""
    f, d = cfg.federation, cfg.data
    out_shards, embeddings, views = [], {}, {}
    for shard in shards:
        tick = time.perf_counter()
        texts = inject_client_noise(shard.data.texts, shard.client_id, f.noise_pool, f.noise_per_text, cfg.seed)
        if f.tokenizer == "per_client":
            vocab = build_vocab(texts, d.vocab_size) if texts else Vocabulary(["<pad>", "<unk>"])
            emb = load_embeddings(d.embeddings, vocab, cfg.model.embed_dim)
            views[shard.client_id] = (encode_texts(prep.test.texts, vocab, d.max_seq_len), emb)
        else:
            vocab, emb = prep.vocab, prep.embedding
        data = EncodedDataset(encode_texts(texts, vocab, d.max_seq_len), shard.labels.copy(), texts,
                              shard.sample_ids.copy())
        out_shards.append((ClientShard(shard.client_id, data), (time.perf_counter() - tick) * 1000.0))
        embeddings[shard.client_id] = emb
    testset = TestSet(prep.test.labels, views) if views else TestSet.common(prep.test, prep.embedding)
    return out_shards, embeddings, testset


def _backend(cfg: ExperimentConfig):
    tr = cfg.transport
    if tr.backend == "filesystem":
        return FilesystemBackend(tr.root)
    if tr.backend == "socket":
        return SocketBackend(tr.address)
    return MemoryBackend()


def build_federation(cfg: ExperimentConfig, prep: Prepared | None = None, backend=None,
                     **overrides) -> Federation:
    prep = prep if prep is not None else prepare(cfg)
    fcfg = cfg.federation_config(**overrides)
    shards = make_shards(prep.train, cfg.shard_plan(), cfg.seed)
    client_shards, embeddings, testset = _client_views(cfg, prep, shards)
    workers = {}
    if cfg.transport.local_clients:
        workers = {s.client_id: ClientWorker(s.client_id, s, embeddings[s.client_id], fcfg,
                                             setup_ms=prep.prepare_ms + ms)
                   for s, ms in client_shards}
    return Federation(fcfg, [s for s, _ in client_shards], testset, embeddings,
                      backend if backend is not None else _backend(cfg), CommLedger(), workers=workers)


# ---------------------------------------------------------------------------
# outputs

METRIC_FIELDS = ["round", "model", "accuracy", "precision", "recall", "loss"]
LEDGER_FIELDS = ["round", "endpoint", "tx", "rx", "polls", "poll_overhead", "tx_mb", "rx_mb"]
PROFILE_FIELDS = ["round", "endpoint", "training_ms", "overhead_ms", "upload_ms", "download_ms",
                  "inference_us_per_sample"]


@dataclass
class RunResult:
    history: list[RoundRecord]
    final_params: ModelParameters
    output_dir: Path
    ledger: CommLedger | None = None


def _write_csv(path: Path, fields, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def write_outputs(cfg: ExperimentConfig, out: Path, history: list[RoundRecord], final: ModelParameters,
                  vocab: Vocabulary | None, ledger: CommLedger | None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "rounds.jsonl", "w", encoding="utf-8") as fh:
        for rec in history:
            fh.write(json.dumps({"mode": cfg.mode, "cell": cfg.model.cell.lower(), **rec.to_json()}) + "\n")

    metric_rows, profile_rows = [], []
    for rec in history:
        for name, rep in [("global", rec.global_metrics)] + [
                (f"client-{k}", v) for k, v in sorted(rec.local_metrics.items())]:
            metric_rows.append({"round": rec.round, "model": name, "accuracy": rep.accuracy,
                                "precision": rep.macro_precision, "recall": rep.macro_recall,
                                "loss": rep.loss})
        profile_rows.append({"round": rec.round, "endpoint": "mean", **rec.profile.as_dict()})
        for k, prof in sorted(rec.client_profiles.items()):
            profile_rows.append({"round": rec.round, "endpoint": f"client-{k}", **prof.as_dict()})
    _write_csv(out / "metrics.csv", METRIC_FIELDS, metric_rows)
    _write_csv(out / "profile.csv", PROFILE_FIELDS, profile_rows)
    ledger_rows = ledger_report(ledger).rows if ledger is not None else []
    _write_csv(out / "ledger.csv", LEDGER_FIELDS, ledger_rows)

    version = VERSION_F64 if cfg.federation.wire == "f64" else VERSION_F32
    (out / "final_model.ftxp").write_bytes(serialize_params(final, version))
    if vocab is not None:
        vocab.save(out / "vocab.json")
    meta = {"arch": dataclasses.asdict(cfg.arch()), "embeddings": cfg.data.embeddings,
            "wire_version": version, "vocab": "vocab.json" if vocab is not None else None}
    (out / "run.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")


def _summary_line(cfg, rec: RoundRecord) -> str:
    g = rec.global_metrics
    label = "epoch" if cfg.mode == "centralized" else "round"
    return (f"{label} {rec.round:3d}  acc {g.accuracy:.4f}  prec {g.macro_precision:.4f}  "
            f"rec {g.macro_recall:.4f}  loss {g.loss:.4f}")


def run_experiment(cfg: ExperimentConfig, out_dir=None, echo=print) -> RunResult:
    """Run the configured experiment and write its artifacts."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    prep = prepare(cfg)
    if cfg.mode == "centralized":
        fcfg = cfg.federation_config(n_clients=1, participants=None, drop_client=None)
        epochs = cfg.training.epochs if cfg.training.epochs is not None else cfg.federation.rounds
        final, history = run_centralized(fcfg, prep.train, prep.test, prep.embedding, epochs)
        for rec in history:
            echo(_summary_line(cfg, rec))
        write_outputs(cfg, out, history, final, prep.vocab, None)
        return RunResult(history, final, out)

    fed = build_federation(cfg, prep)
    for _ in range(fed.config.rounds):
        echo(_summary_line(cfg, fed.run_round()))
    vocab = prep.vocab if cfg.federation.tokenizer == "common" else None
    write_outputs(cfg, out, fed.history, fed.global_params, vocab, fed.ledger)
    return RunResult(fed.history, fed.global_params, out, fed.ledger)


@dataclass
class AblationResult:
    common: list[float]
    per_client: list[float]
    output_dir: Path


def run_tokenizer_ablation(cfg: ExperimentConfig, out_dir=None, echo=print) -> AblationResult:
    """Run the same federation with the common tokenizer and with per-client tokenizers."""
    if cfg.mode != "federated":
        raise ConfigError("mode", "the tokenizer ablation needs federated mode")
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    series = {}
    for mode in ("common", "per_client"):
        variant = dataclasses.replace(cfg, federation=dataclasses.replace(cfg.federation, tokenizer=mode))
        echo(f"-- tokenizer: {mode}")
        result = run_experiment(variant, out / mode, echo)
        series[mode] = [r.global_metrics.accuracy for r in result.history]
    rows = [{"round": i + 1, "common_accuracy": c, "per_client_accuracy": p}
            for i, (c, p) in enumerate(zip(series["common"], series["per_client"]))]
    _write_csv(out / "ablation.csv", ["round", "common_accuracy", "per_client_accuracy"], rows)
    return AblationResult(series["common"], series["per_client"], out)


# ---------------------------------------------------------------------------
# networked client

def run_client_agent(cfg: ExperimentConfig, client_id: int, address: str | None = None,
                     echo=print) -> list[dict]:
    """Participate as one client over a socket (or shared filesystem) transport until the last round."""
    if not 0 <= client_id < cfg.federation.clients:
        raise ConfigError("client-id", f"must be in [0, {cfg.federation.clients})")
    prep = prepare(cfg)
    fcfg = cfg.federation_config()
    shards = make_shards(prep.train, cfg.shard_plan(), cfg.seed)
    views, embeddings, _ = _client_views(cfg, prep, [shards[client_id]])
    (shard, setup_ms), = views
    worker = ClientWorker(client_id, shard, embeddings[client_id], fcfg, setup_ms=prep.prepare_ms + setup_ms)
    backend = SocketBackend(address) if address else _backend(cfg)
    endpoint = Endpoint(backend, f"client-{client_id}")
    log_rows = []
    for t in range(1, fcfg.rounds + 1):
        if client_id not in select_clients(t, fcfg):
            continue
        _, watch = worker.run_round(endpoint, t, timeout=fcfg.barrier_timeout)
        traffic = endpoint.ledger.round_rows(t).get(endpoint.name)
        row = {"round": t, "loss": worker.last_loss, **watch.profile().as_dict(),
               **(traffic.as_dict() if traffic else {})}
        log_rows.append(row)
        echo(f"client {client_id} round {t:3d}  train loss {worker.last_loss:.4f}")
    return log_rows


def load_run_model(run_dir) -> tuple[ModelParameters, Vocabulary, Any, ArchitectureSpec]:
    from .transport import deserialize_params
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "run.json").read_text(encoding="utf-8"))
    arch = ArchitectureSpec(**meta["arch"])
    if meta.get("vocab") is None:
        raise ValueError("this run used per-client tokenizers; there is no shared vocabulary to predict with")
    vocab = Vocabulary.load(run_dir / meta["vocab"])
    embedding = load_embeddings(meta["embeddings"], vocab, arch.embed_dim)
    params = deserialize_params((run_dir / "final_model.ftxp").read_bytes(), arch)
    return params, vocab, embedding, arch


__all__ = ["AblationResult", "ConfigError", "ExperimentConfig", "RunResult", "build_federation",
           "config_from_dict", "load_config", "load_run_model", "prepare", "run_client_agent",
           "run_experiment", "run_tokenizer_ablation", "validate", "write_outputs"]
