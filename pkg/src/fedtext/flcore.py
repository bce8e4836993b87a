"""Synchronous federated averaging over a blob store and a message board.

A round goes: the server has published the previous global model; each
participant polls for it, downloads it, trains one local epoch, uploads its
parameters and posts a completion message.  The server waits until every
participant has posted (the barrier), downloads the local models, averages
them weighted by shard size, evaluates everything on the held-out test set
and publishes the new global model.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .datashard import ClientShard, EncodedDataset, ShardPlan, make_shards
from .metrics import (INFERENCE_SAMPLES, EvalReport, Stopwatch, TimeProfile, predictions_and_loss,
                      profile_inference, profile_round, report_from_predictions)
from .seqnet import (AdamState, ArchitectureSpec, ModelParameters, dataset_loss, init_parameters,
                     train_local_epoch)
from .transport import (SERVER, VERSION_F32, BlobKey, CommLedger, Endpoint, MemoryBackend,
                        MessageFilter, MessageKind, SyncMessage, deserialize_params, serialize_params)
from .transport.ledger import Traffic

log = logging.getLogger(__name__)


class LayoutError(ValueError):
    pass


class BarrierTimeout(TimeoutError):
    def __init__(self, round: int, missing: Sequence[int], waited: float):
        self.round, self.missing, self.waited = round, list(missing), waited
        super().__init__(f"round {round}: no completion message from clients {self.missing} "
                         f"after {waited:.1f}s")


class RoundAborted(RuntimeError):
    """A round stopped part-way.  The state it left behind can be resumed."""

    def __init__(self, round: int, phase: str, cause: BaseException):
        self.round, self.phase, self.cause = round, phase, cause
        super().__init__(f"round {round} aborted during {phase}: {cause}")


@dataclass
class FederationConfig:
    rounds: int = 10
    n_clients: int = 5
    participants: int | None = None     # K; derived from n_clients / drop_client when None
    learning_rate: float = 1e-3
    batch_size: int = 32
    local_epochs: int = 1
    arch: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    drop_client: int | None = None
    seed: int = 0
    barrier_timeout: float = 300.0
    poll_interval: float = 0.5
    wire_version: int = VERSION_F32
    profile_inference: bool = True
    track_objective: bool = False

    def __post_init__(self):
        if self.participants is None:
            self.participants = self.n_clients - (self.drop_client is not None)
        self.validate()

    def validate(self):
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")
        if self.n_clients < 1:
            raise ValueError("n_clients must be positive")
        if not 1 <= self.participants <= self.n_clients:
            raise ValueError(f"participants must be in [1, {self.n_clients}], got {self.participants}")
        if self.drop_client is not None:
            if not 0 <= self.drop_client < self.n_clients:
                raise ValueError(f"drop_client {self.drop_client} is not a client id")
            if self.participants != self.n_clients - 1:
                raise ValueError("with a dropped client, participants must be n_clients - 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1 or self.local_epochs < 1:
            raise ValueError("batch_size and local_epochs must be positive")
        if self.barrier_timeout < 0 or self.poll_interval < 0:
            raise ValueError("timeouts must be non-negative")


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 63-bit seed for a (seed, round, client, ...) tuple."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) + 1 for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def select_clients(round: int, config: FederationConfig) -> list[int]:
    """All clients except the dropped one (if any), in id order, capped at K."""
    ids = [c for c in range(config.n_clients) if c != config.drop_client]
    return ids[:config.participants]


def fedavg(contributions: Sequence[tuple[ModelParameters, int]]) -> ModelParameters:
    """Size-weighted mean of parameter sets; weights are size / (sum of sizes given)."""
    if not contributions:
        raise ValueError("fedavg needs at least one contribution")
    first = contributions[0][0]
    for params, size in contributions:
        if not params.same_layout(first):
            raise LayoutError("contributions have different parameter layouts")
        if size < 0:
            raise ValueError("contribution sizes must be non-negative")
    total = sum(size for _, size in contributions)
    if total <= 0:
        raise ValueError("total contribution size is zero")
    layers = {}
    for name in first.names:
        acc = np.zeros_like(first[name])
        for params, size in contributions:
            acc += (size / total) * params[name]
        layers[name] = acc
    return ModelParameters(first.arch, layers)


def global_objective(shards: Sequence[ClientShard], params: ModelParameters, embedding) -> float:
    """Size-weighted mean of per-shard evaluation losses.

    ``embedding`` is one table for all shards or a mapping client id -> table.
    """
    shards = [s for s in shards if len(s)]
    if not shards:
        raise ValueError("no non-empty shards")
    total = sum(len(s) for s in shards)
    value = 0.0
    for s in shards:
        emb = embedding[s.client_id] if isinstance(embedding, dict) else embedding
        value += len(s) / total * dataset_loss(params, emb, s.token_ids, s.labels)
    return value


# ---------------------------------------------------------------------------
# evaluation on the server

@dataclass
class TestSet:
    """Held-out data as seen through one or more tokenizers.

    ``views`` maps a client id (or ``None`` for the common tokenizer) to the
    encoded ids and the matching embedding table.
    """

    labels: np.ndarray
    views: dict

    @classmethod
    def common(cls, data: EncodedDataset, embedding) -> TestSet:
        return cls(data.labels, {None: (data.token_ids, embedding)})

    def _views_for(self, client_id):
        if None in self.views:
            return [self.views[None]]
        if client_id is None:
            return [self.views[k] for k in sorted(self.views)]
        return [self.views[client_id]]

    def evaluate(self, params: ModelParameters, client_id=None, with_loss=True) -> EvalReport:
        """Pooled report over the relevant views; the global model is scored under every view."""
        views = self._views_for(client_id)
        results = [predictions_and_loss(params, emb, ids, self.labels) for ids, emb in views]
        preds = np.concatenate([p for p, _ in results])
        labels = np.tile(self.labels, len(views))
        value = float(np.mean([v for _, v in results])) if with_loss else None
        return report_from_predictions(labels, preds, value)

    def inference_samples(self):
        ids, emb = self._views_for(None)[0]
        if ids.shape[0] < INFERENCE_SAMPLES:
            return None
        return ids[:INFERENCE_SAMPLES], emb


# ---------------------------------------------------------------------------
# participants

def poll_until(endpoint: Endpoint, flt: MessageFilter, done: Callable[[list], bool],
               timeout: float, interval: float, sleep=time.sleep) -> list[SyncMessage]:
    """Poll until ``done(messages)`` or ``timeout`` seconds pass; timeout 0 polls exactly once."""
    start = time.monotonic()
    while True:
        msgs = endpoint.poll(flt)
        if done(msgs):
            return msgs
        if time.monotonic() - start + interval > timeout:
            return msgs
        sleep(interval)


class ClientWorker:
    """One client: its shard, its embedding table and its optimizer state."""

    def __init__(self, client_id: int, shard: ClientShard, embedding, config: FederationConfig,
                 setup_ms: float = 0.0):
        self.client_id = client_id
        self.shard = shard
        self.embedding = embedding
        self.config = config
        self.optimizer: AdamState | None = None
        self.pending_setup_ms = setup_ms
        self.last_loss: float | None = None

    def train(self, params: ModelParameters, round: int) -> ModelParameters:
        cfg = self.config
        for epoch in range(cfg.local_epochs):
            result = train_local_epoch(
                params, self.embedding, self.shard.token_ids, self.shard.labels,
                lr=cfg.learning_rate, batch_size=cfg.batch_size,
                seed=derive_seed(cfg.seed, round, self.client_id, epoch), optimizer=self.optimizer)
            params, self.optimizer, self.last_loss = result.params, result.optimizer, result.mean_loss
        return params

    def fetch_global(self, endpoint: Endpoint, round: int, watch: Stopwatch,
                     timeout: float = 0.0, sleep=time.sleep) -> ModelParameters:
        flt = MessageFilter(MessageKind.GLOBAL_PUBLISHED, round - 1, SERVER)
        with watch.time("download"):
            msgs = poll_until(endpoint, flt, bool, timeout, self.config.poll_interval, sleep)
            if not msgs:
                raise BarrierTimeout(round, [SERVER], timeout)
            data = endpoint.get(BlobKey.global_(round - 1))
        with watch.time("overhead"):
            return deserialize_params(data, self.config.arch)

    def upload(self, endpoint: Endpoint, params: ModelParameters, round: int, watch: Stopwatch):
        with watch.time("overhead"):
            data = serialize_params(params, self.config.wire_version)
        with watch.time("upload"):
            endpoint.put(BlobKey.local(round, self.client_id), data)
            endpoint.post(SyncMessage(MessageKind.CLIENT_DONE, round, self.client_id, _now_ms()))

    def wait_poll(self, endpoint: Endpoint, round: int) -> bool:
        """One poll for the global model of ``round``; True once it is published."""
        return bool(endpoint.poll(MessageFilter(MessageKind.GLOBAL_PUBLISHED, round, SERVER)))

    def run_round(self, endpoint: Endpoint, round: int, timeout: float = 0.0, sleep=time.sleep):
        endpoint.round = round
        watch = Stopwatch()
        watch.totals["overhead"] += self.pending_setup_ms
        self.pending_setup_ms = 0.0
        params = self.fetch_global(endpoint, round, watch, timeout, sleep)
        with watch.time("training"):
            local = self.train(params, round)
        self.upload(endpoint, local, round, watch)
        return local, watch


def _now_ms() -> int:
    return int(time.time() * 1000)


# ---------------------------------------------------------------------------
# server

class Phase(enum.IntEnum):
    BROADCAST = 0
    LOCAL_TRAINING = 1
    AGGREGATING = 2
    PUBLISHED = 3


@dataclass
class RoundState:
    round: int
    global_params: ModelParameters
    participants: list[int]
    received: dict[int, ModelParameters] = field(default_factory=dict)
    phase: Phase = Phase.BROADCAST

    def advance(self, phase: Phase):
        """Move forward to ``phase``; a resumed round may already be past it."""
        self.phase = max(self.phase, phase)


@dataclass
class RoundRecord:
    round: int
    participants: list[int]
    global_metrics: EvalReport
    local_metrics: dict[int, EvalReport]
    objective: float | None = None
    traffic: dict[str, Traffic] = field(default_factory=dict)
    client_profiles: dict[int, TimeProfile] = field(default_factory=dict)
    profile: TimeProfile = field(default_factory=TimeProfile)
    server_ms: dict[str, float] = field(default_factory=dict)
    train_loss: dict[int, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "participants": self.participants,
            "global": self.global_metrics.as_dict(),
            "local": {str(k): v.as_dict() for k, v in sorted(self.local_metrics.items())},
            "objective": self.objective,
            "train_loss": {str(k): v for k, v in sorted(self.train_loss.items())},
            "bytes": {k: v.as_dict() for k, v in sorted(self.traffic.items())},
            "timing": {
                "mean": self.profile.as_dict(),
                "clients": {str(k): v.as_dict() for k, v in sorted(self.client_profiles.items())},
                "server_ms": self.server_ms,
            },
        }


class FederationServer:
    def __init__(self, config: FederationConfig, endpoint: Endpoint, testset: TestSet,
                 shard_sizes: dict[int, int], sleep=time.sleep):
        self.config = config
        self.endpoint = endpoint
        self.testset = testset
        self.shard_sizes = shard_sizes
        self.sleep = sleep

    def publish(self, params: ModelParameters, round: int):
        self.endpoint.round = round
        self.endpoint.put(BlobKey.global_(round), serialize_params(params, self.config.wire_version))
        self.endpoint.post(SyncMessage(MessageKind.GLOBAL_PUBLISHED, round, SERVER, _now_ms()))

    def barrier(self, state: RoundState, timeout: float) -> None:
        flt = MessageFilter(MessageKind.CLIENT_DONE, state.round)
        want = set(state.participants)

        def complete(msgs):
            return want <= {m.sender for m in msgs}

        start = time.monotonic()
        msgs = poll_until(self.endpoint, flt, complete, timeout, self.config.poll_interval, self.sleep)
        if not complete(msgs):
            missing = sorted(want - {m.sender for m in msgs})
            raise BarrierTimeout(state.round, missing, time.monotonic() - start)

    def collect(self, state: RoundState) -> None:
        for cid in state.participants:
            if cid not in state.received:
                data = self.endpoint.get(BlobKey.local(state.round, cid))
                state.received[cid] = deserialize_params(data, self.config.arch)

    def aggregate(self, state: RoundState) -> ModelParameters:
        if set(state.received) != set(state.participants):
            raise RuntimeError("aggregation attempted before every participant reported")
        ordered = sorted(state.received.items())
        return fedavg([(params, self.shard_sizes[cid]) for cid, params in ordered])


class Federation:
    """Drives rounds for a server plus in-process client workers.

    With ``workers`` covering every participant the clients run sequentially
    inside :meth:`run_round`, and the board is polled exactly once at each
    barrier.  With ``workers`` empty the clients are external processes and
    the server waits on the barrier up to ``config.barrier_timeout``.
    """

    def __init__(self, config: FederationConfig, shards: Sequence[ClientShard], testset: TestSet,
                 embeddings: dict, backend=None, ledger: CommLedger | None = None,
                 workers: dict[int, ClientWorker] | None = None, initial: ModelParameters | None = None,
                 sleep=time.sleep):
        self.config = config
        self.shards = {s.client_id: s for s in shards}
        self.embeddings = embeddings
        self.backend = backend if backend is not None else MemoryBackend()
        self.ledger = ledger if ledger is not None else CommLedger()
        self.workers = workers if workers is not None else {
            s.client_id: ClientWorker(s.client_id, s, embeddings[s.client_id], config) for s in shards}
        self.endpoints = {cid: Endpoint(self.backend, f"client-{cid}", self.ledger) for cid in self.workers}
        server_ep = Endpoint(self.backend, "server", self.ledger)
        sizes = {cid: len(s) for cid, s in self.shards.items()}
        self.server = FederationServer(config, server_ep, testset, sizes, sleep)
        self.testset = testset
        self.sleep = sleep
        self.global_params = initial if initial is not None else init_parameters(config.arch, config.seed)
        self.initial_params = self.global_params
        self.state: RoundState | None = None
        self.history: list[RoundRecord] = []
        self.server.publish(self.global_params, 0)

    @property
    def next_round(self) -> int:
        return len(self.history) + 1

    def run_round(self) -> RoundRecord:
        t = self.next_round
        cfg = self.config
        if self.state is None or self.state.round != t:
            self.state = RoundState(t, self.global_params, select_clients(t, cfg))
        state = self.state
        local = set(state.participants) <= set(self.workers)
        watches: dict[int, Stopwatch] = {}
        losses: dict[int, float] = {}

        phase = "local training"
        try:
            state.advance(Phase.LOCAL_TRAINING)
            if local:
                finished = []
                for cid in state.participants:
                    if cid in state.received:
                        continue
                    _, watch = self.workers[cid].run_round(self.endpoints[cid], t)
                    watches[cid] = watch
                    losses[cid] = self.workers[cid].last_loss
                    # clients that finished earlier keep polling while this one trained
                    for early in finished:
                        self.workers[early].wait_poll(self.endpoints[early], t)
                    finished.append(cid)
            phase = "barrier"
            self.server.endpoint.round = t
            self.server.barrier(state, 0.0 if local else cfg.barrier_timeout)
            phase = "download"
            self.server.collect(state)
        except BarrierTimeout:
            raise
        except Exception as exc:
            raise RoundAborted(t, phase, exc) from exc

        state.advance(Phase.AGGREGATING)
        tick = time.perf_counter()
        new_global = self.server.aggregate(state)
        agg_ms = (time.perf_counter() - tick) * 1000.0

        tick = time.perf_counter()
        global_report = self.testset.evaluate(new_global)
        local_reports = {cid: self.testset.evaluate(p, cid) for cid, p in sorted(state.received.items())}
        eval_ms = (time.perf_counter() - tick) * 1000.0
        objective = None
        if cfg.track_objective:
            objective = global_objective(list(self.shards.values()), new_global, self.embeddings)

        inference_us = 0.0
        sample = self.testset.inference_samples() if cfg.profile_inference else None
        if sample is not None:
            inference_us = profile_inference(new_global, sample[1], sample[0])

        try:
            self.server.publish(new_global, t)
        except Exception as exc:
            raise RoundAborted(t, "publish", exc) from exc
        state.global_params = new_global
        state.advance(Phase.PUBLISHED)
        self.global_params = new_global

        profiles = {cid: w.profile(inference_us) for cid, w in watches.items()}
        record = RoundRecord(
            round=t, participants=list(state.participants), global_metrics=global_report,
            local_metrics=local_reports, objective=objective, traffic=self.ledger.round_rows(t),
            client_profiles=profiles,
            profile=replace(profile_round(list(profiles.values())), inference_us_per_sample=inference_us),
            server_ms={"aggregate": agg_ms, "evaluate": eval_ms}, train_loss=losses)
        self.history.append(record)
        log.info("round %d: global accuracy %.4f", t, global_report.accuracy)
        return record

    def run(self, rounds: int | None = None) -> list[RoundRecord]:
        for _ in range(self.config.rounds if rounds is None else rounds):
            self.run_round()
        return self.history


def run_federation(config: FederationConfig, train: EncodedDataset, test: EncodedDataset, embedding,
                   plan: ShardPlan | None = None, backend=None, ledger: CommLedger | None = None,
                   shard_seed: int | None = None) -> Federation:
    """Shard ``train`` (IID over all clients by default) and run ``config.rounds`` rounds."""
    plan = plan if plan is not None else ShardPlan.iid(config.n_clients)
    if plan.n_clients != config.n_clients:
        raise ValueError(f"shard plan has {plan.n_clients} clients, config has {config.n_clients}")
    shards = make_shards(train, plan, config.seed if shard_seed is None else shard_seed)
    embeddings = {s.client_id: embedding for s in shards}
    fed = Federation(config, shards, TestSet.common(test, embedding), embeddings, backend, ledger)
    fed.run()
    return fed


def run_centralized(config: FederationConfig, train: EncodedDataset, test: EncodedDataset, embedding,
                    epochs: int | None = None) -> tuple[ModelParameters, list[RoundRecord]]:
    """Train one model on all data; epoch ``e`` uses the same seeds as round ``e`` of client 0."""
    shard = ClientShard(0, train)
    worker = ClientWorker(0, shard, embedding, config)
    testset = TestSet.common(test, embedding)
    params = init_parameters(config.arch, config.seed)
    history = []
    for epoch in range(1, (config.rounds if epochs is None else epochs) + 1):
        watch = Stopwatch()
        with watch.time("training"):
            params = worker.train(params, epoch)
        inference_us = 0.0
        sample = testset.inference_samples() if config.profile_inference else None
        if sample is not None:
            inference_us = profile_inference(params, sample[1], sample[0])
        history.append(RoundRecord(epoch, [0], testset.evaluate(params), {}, profile=watch.profile(inference_us),
                                   client_profiles={0: watch.profile(inference_us)},
                                   train_loss={0: worker.last_loss}))
    return params, history
