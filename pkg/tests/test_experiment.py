import csv
import json
import threading

import numpy as np
import pytest
import yaml
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from fedtext.cli import main
from fedtext.experiment import (ConfigError, config_from_dict, load_config, run_client_agent, run_experiment,
                                run_tokenizer_ablation)
from fedtext.synth import generate_synthetic_corpus, inject_client_noise, keyword_classify
from fedtext.textproc import read_labeled_csv
from fedtext.transport import MemoryBackend, TransportServer


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    generate_synthetic_corpus(60, seed=0, out_dir=root)
    return root


def base_config(data_dir, **sections):
    cfg = {
        "seed": 0,
        "output_dir": "out",
        "data": {"train": str(data_dir / "train.csv"), "test": str(data_dir / "test.csv"),
                 "embeddings": str(data_dir / "embeddings.txt"), "max_seq_len": 16},
        "model": {"recurrent_units": 8, "dense_units": 8},
        "training": {"learning_rate": 0.01, "batch_size": 16},
        "federation": {"rounds": 3, "clients": 5, "profile_inference": False},
    }
    for name, values in sections.items():
        if isinstance(values, dict):
            cfg.setdefault(name, {}).update(values)
        else:
            cfg[name] = values
    return cfg


def write_config(tmp_path, cfg, name="config.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return path


def read_jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def without_timing(rows):
    return [{k: v for k, v in r.items() if k != "timing"} for r in rows]


# -- config validation ----------------------------------------------------------------

BROKEN = [
    (lambda c: c.update(mode="hybrid"), "mode"),
    (lambda c: c.update(colour="red"), "colour"),
    (lambda c: c["data"].update(train="/does/not/exist.csv"), "data.train"),
    (lambda c: c["data"].pop("embeddings"), "data.embeddings"),
    (lambda c: c["data"].update(max_seq_len=0), "data.max_seq_len"),
    (lambda c: c["data"].update(vocab_size=2), "data.vocab_size"),
    (lambda c: c["data"].update(tokenizer_corpus="a.txt", vocab="v.json"), "data.vocab"),
    (lambda c: c["model"].update(cell="transformer"), "model.cell"),
    (lambda c: c["model"].update(dropout=1.5), "model.dropout"),
    (lambda c: c["model"].update(recurrent_units=-3), "model.recurrent_units"),
    (lambda c: c["model"].update(layers=2), "model.layers"),
    (lambda c: c["training"].update(learning_rate=-0.1), "training.learning_rate"),
    (lambda c: c["training"].update(batch_size=0), "training.batch_size"),
    (lambda c: c["federation"].update(clients=0), "federation.clients"),
    (lambda c: c["federation"].update(drop_client=9), "federation.drop_client"),
    (lambda c: c["federation"].update(drop_client=1, participants=5), "federation.participants"),
    (lambda c: c["federation"].update(distribution="dirichlet"), "federation.distribution"),
    (lambda c: c["federation"].update(distribution="table1", clients=4), "federation.distribution"),
    (lambda c: c["federation"].update(distribution=[[50, 50, 50], [60, 50, 50]], clients=2),
     "federation.distribution"),
    (lambda c: c["federation"].update(tokenizer="bpe"), "federation.tokenizer"),
    (lambda c: (c.update(mode="centralized"), c["federation"].update(tokenizer="per_client")),
     "federation.tokenizer"),
    (lambda c: c["federation"].update(wire="f16"), "federation.wire"),
    (lambda c: c["federation"].update(rounds=-1), "federation.rounds"),
    (lambda c: c["augmentation"].update(sub_prob=2.0) if "augmentation" in c
     else c.update(augmentation={"sub_prob": 2.0}), "augmentation.sub_prob"),
    (lambda c: c.update(transport={"backend": "pigeon"}), "transport.backend"),
    (lambda c: c.update(transport={"backend": "socket", "address": "nowhere"}), "transport.address"),
    (lambda c: c.update(transport={"backend": "filesystem"}), "transport.root"),
    (lambda c: c.update(transport={"backend": "memory", "local_clients": False}), "transport.local_clients"),
]


@settings(max_examples=len(BROKEN) * 2, deadline=None,
          suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.sampled_from(BROKEN), st.integers(0, 2**31 - 1))
def test_broken_configs_name_their_field(data_dir, case, seed):
    mutate, field = case
    cfg = base_config(data_dir, seed=seed)
    mutate(cfg)
    with pytest.raises(ConfigError) as err:
        config_from_dict(cfg)
    assert err.value.field == field


def test_valid_config_and_relative_paths(data_dir, tmp_path):
    cfg = base_config(data_dir)
    cfg["data"]["train"] = "train.csv"
    path = write_config(data_dir, cfg, "rel.yaml")
    loaded = load_config(path)
    assert loaded.data.train == str(data_dir / "train.csv")
    assert loaded.output_dir == str(data_dir / "out")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_inline_distribution_accepted(data_dir):
    cfg = base_config(data_dir, federation={"clients": 2, "distribution": [[70, 30, 50], [30, 70, 50]]})
    assert config_from_dict(cfg).shard_plan().n_clients == 2


# -- runs -----------------------------------------------------------------------------

def test_federated_run_artifacts(data_dir, tmp_path, capsys):
    cfg = config_from_dict(base_config(data_dir, federation={"rounds": 10}))
    result = run_experiment(cfg, tmp_path / "fed")
    out = tmp_path / "fed"
    rows = read_jsonl(out / "rounds.jsonl")
    assert len(rows) == 10 and [r["round"] for r in rows] == list(range(1, 11))
    assert len(capsys.readouterr().out.strip().splitlines()) == 10
    with open(out / "metrics.csv") as fh:
        metrics = list(csv.DictReader(fh))
    assert len(metrics) == 10 * 6
    with open(out / "ledger.csv") as fh:
        ledger = list(csv.DictReader(fh))
    assert {r["endpoint"] for r in ledger} >= {"server", "store", "client-0"}
    assert (out / "final_model.ftxp").stat().st_size > 0
    assert len(result.history) == 10


def test_centralized_run_has_no_ledger(data_dir, tmp_path):
    cfg = config_from_dict(base_config(data_dir, mode="centralized", training={"epochs": 4}))
    run_experiment(cfg, tmp_path / "c", echo=lambda *_: None)
    assert len(read_jsonl(tmp_path / "c" / "rounds.jsonl")) == 4
    assert (tmp_path / "c" / "ledger.csv").read_text().strip().count("\n") == 0


def test_same_seed_same_rounds(data_dir, tmp_path):
    cfg = config_from_dict(base_config(data_dir, federation={"distribution": "table1", "drop_client": 2}))
    run_experiment(cfg, tmp_path / "a", echo=lambda *_: None)
    run_experiment(cfg, tmp_path / "b", echo=lambda *_: None)
    a, b = read_jsonl(tmp_path / "a" / "rounds.jsonl"), read_jsonl(tmp_path / "b" / "rounds.jsonl")
    assert without_timing(a) == without_timing(b)
    assert (tmp_path / "a" / "ledger.csv").read_bytes() == (tmp_path / "b" / "ledger.csv").read_bytes()


def test_filesystem_backend_run(data_dir, tmp_path):
    cfg = config_from_dict(base_config(data_dir, transport={"backend": "filesystem", "root": str(tmp_path / "s")}))
    mem = run_experiment(config_from_dict(base_config(data_dir)), tmp_path / "m", echo=lambda *_: None)
    fs = run_experiment(cfg, tmp_path / "f", echo=lambda *_: None)
    assert np.array_equal(mem.final_params.flat(), fs.final_params.flat())
    assert (tmp_path / "s" / "board.bin").stat().st_size > 0


def test_augmentation_run(data_dir, tmp_path):
    cfg = config_from_dict(base_config(data_dir, augmentation={"enabled": True}))
    assert len(run_experiment(cfg, tmp_path / "aug", echo=lambda *_: None).history) == 3


def test_ablation_series_aligned(data_dir, tmp_path):
    cfg = config_from_dict(base_config(data_dir, federation={"noise_pool": 10, "noise_per_text": 2}))
    res = run_tokenizer_ablation(cfg, tmp_path / "abl", echo=lambda *_: None)
    assert len(res.common) == len(res.per_client) == 3
    with open(tmp_path / "abl" / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["round"]) for r in rows] == [1, 2, 3]
    assert (tmp_path / "abl" / "common" / "rounds.jsonl").exists()
    assert (tmp_path / "abl" / "per_client" / "rounds.jsonl").exists()


def test_ablation_single_client_modes_coincide(data_dir, tmp_path):
    cfg = config_from_dict(base_config(data_dir, federation={"clients": 1}))
    res = run_tokenizer_ablation(cfg, tmp_path / "one", echo=lambda *_: None)
    np.testing.assert_allclose(res.common, res.per_client, atol=1e-6)
    a = read_jsonl(tmp_path / "one" / "common" / "rounds.jsonl")
    b = read_jsonl(tmp_path / "one" / "per_client" / "rounds.jsonl")
    assert all(abs(x["global"]["loss"] - y["global"]["loss"]) < 1e-6 for x, y in zip(a, b))


def test_ablation_requires_federated_mode(data_dir):
    with pytest.raises(ConfigError):
        run_tokenizer_ablation(config_from_dict(base_config(data_dir, mode="centralized")))


def test_networked_run_with_client_agents(data_dir, tmp_path):
    server = TransportServer(("127.0.0.1", 0), MemoryBackend())
    server.start_background()
    try:
        raw = base_config(data_dir, transport={"backend": "socket", "address": server.address,
                                               "local_clients": False},
                          federation={"barrier_timeout": 60, "poll_interval": 0.01, "rounds": 2})
        cfg = config_from_dict(raw)
        errors = []

        def agent(cid):
            try:
                run_client_agent(cfg, cid, echo=lambda *_: None)
            except Exception as exc:  # surfaced below
                errors.append(exc)

        threads = [threading.Thread(target=agent, args=(c,)) for c in range(5)]
        for t in threads:
            t.start()
        result = run_experiment(cfg, tmp_path / "net", echo=lambda *_: None)
        for t in threads:
            t.join(60)
        assert not errors
    finally:
        server.shutdown()
        server.server_close()
    local = run_experiment(config_from_dict(base_config(data_dir, federation={"rounds": 2})), tmp_path / "loc",
                           echo=lambda *_: None)
    assert np.array_equal(result.final_params.flat(), local.final_params.flat())


# -- synthetic corpus -----------------------------------------------------------------

def test_synthetic_corpus_shape_and_oracle(tmp_path):
    c = generate_synthetic_corpus(200, seed=3, out_dir=tmp_path)
    train = read_labeled_csv(c.train_path)
    assert len(train) == 600 and train.class_counts().tolist() == [200, 200, 200]
    assert all(keyword_classify(t, c.markers) == y for t, y in zip(train.texts, train.labels))
    test = read_labeled_csv(c.test_path)
    assert all(keyword_classify(t, c.markers) == y for t, y in zip(test.texts, test.labels))


def test_synthetic_corpus_is_byte_identical(tmp_path):
    a = generate_synthetic_corpus(20, seed=5, out_dir=tmp_path / "a")
    b = generate_synthetic_corpus(20, seed=5, out_dir=tmp_path / "b")
    for x, y in ((a.train_path, b.train_path), (a.test_path, b.test_path), (a.embeddings_path, b.embeddings_path)):
        assert x.read_bytes() == y.read_bytes()


def test_marker_vectors_cluster_by_class(tmp_path):
    c = generate_synthetic_corpus(5, seed=0, out_dir=tmp_path)
    vecs = {}
    for line in c.embeddings_path.read_text().splitlines():
        word, *vals = line.split(" ")
        vecs[word] = np.array(vals, dtype=float)
    cent = [np.mean([vecs[m] for m in fam], axis=0) for fam in c.markers]
    for cls, fam in enumerate(c.markers):
        for m in fam:
            assert int(np.argmin([np.linalg.norm(vecs[m] - z) for z in cent])) == cls


def test_client_noise_is_private():
    texts = ["a b c"] * 5
    a, b = inject_client_noise(texts, 0, 10, 2), inject_client_noise(texts, 1, 10, 2)
    words_a = {w for t in a for w in t.split()} - {"a", "b", "c"}
    words_b = {w for t in b for w in t.split()} - {"a", "b", "c"}
    assert words_a and words_b and not words_a & words_b
    assert inject_client_noise(texts, 0, 0, 2) == texts


# -- command line ----------------------------------------------------------------------

def test_cli_synth_run_predict(tmp_path, capsys, monkeypatch):
    assert main(["synth", "--per-class", "30", "--out", str(tmp_path / "s")]) == 0
    cfg_path = tmp_path / "s" / "config.yaml"
    cfg = yaml.safe_load(cfg_path.read_text())
    cfg["federation"]["rounds"] = 2
    cfg_path.write_text(yaml.safe_dump(cfg))
    assert main(["run", str(cfg_path), "--out", str(tmp_path / "r"), "--seed", "4"]) == 0
    capsys.readouterr()
    assert main(["predict", "--model", str(tmp_path / "r" / "final_model.ftxp"), "--text", "calm0 w1"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.split("\t")[0] in ("not depressed", "moderately depressed", "severely depressed")


def test_cli_exit_codes(tmp_path, data_dir, capsys):
    bad = write_config(tmp_path, {**base_config(data_dir), "federation": {"rounds": "ten"}})
    assert main(["run", str(bad)]) == 2
    assert "federation.rounds" in capsys.readouterr().err
    assert main(["ablate-tokenizer", str(tmp_path / "nope.yaml")]) == 2


def test_cli_runtime_failure_exit_1(tmp_path, data_dir, capsys):
    cfg = base_config(data_dir)
    broken_train = tmp_path / "broken.csv"
    broken_train.write_text("text,label\nhello,7\n")
    cfg["data"]["train"] = str(broken_train)
    assert main(["run", str(write_config(tmp_path, cfg))]) == 1
    assert "row 2" in capsys.readouterr().err


def test_cli_ablate(tmp_path, data_dir, capsys):
    path = write_config(tmp_path, base_config(data_dir, federation={"rounds": 1}))
    assert main(["ablate-tokenizer", str(path), "--out", str(tmp_path / "ab")]) == 0
    assert "per-client" in capsys.readouterr().out


def test_log_level_from_environment(monkeypatch, tmp_path, data_dir):
    import logging
    monkeypatch.setenv("FEDTEXT_LOG", "debug")
    root = logging.getLogger()
    old = root.handlers[:], root.level
    root.handlers.clear()
    try:
        path = write_config(tmp_path, base_config(data_dir, federation={"rounds": 1}))
        assert main(["run", str(path), "--out", str(tmp_path / "lg")]) == 0
        assert root.level == logging.DEBUG
    finally:
        root.handlers[:] = old[0]
        root.setLevel(old[1])

