"""Federated recurrent text classification on numpy.

Modules: ``seqnet`` (RNN/GRU/LSTM with backprop through time), ``textproc``
(tokenizer, vocabulary, embeddings), ``datashard`` (IID and class-skewed
shards), ``flcore`` (federated averaging rounds), ``transport`` (wire format,
blob store and message board backends, byte ledger), ``metrics`` and
``experiment`` (config-driven runs behind the ``fedtext`` command).
"""

from .datashard import ShardPlan, make_shards, split_iid, split_noniid
from .flcore import Federation, FederationConfig, fedavg, run_centralized, run_federation
from .seqnet import ArchitectureSpec, ModelParameters, init_parameters
from .textproc import Vocabulary, build_vocab, load_embeddings, tokenize

__version__ = "0.1.0"

__all__ = ["ArchitectureSpec", "Federation", "FederationConfig", "ModelParameters", "ShardPlan",
           "Vocabulary", "build_vocab", "fedavg", "init_parameters", "load_embeddings", "make_shards",
           "run_centralized", "run_federation", "split_iid", "split_noniid", "tokenize"]
