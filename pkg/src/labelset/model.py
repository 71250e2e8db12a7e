"""Run configuration, full-model assembly, and checkpoint round-tripping.

A Model owns the encoder, the query source (graph-convolution pipeline or a
plain learnable table), and either the set-decoder head or the
independent-sigmoid baseline head.  Parameter creation order is fixed by the
architecture, so seeded initialization and optimizer iteration are
reproducible run to run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import nn, tensor as T
from .data import Corpus, LabelVocabulary
from .decoder import BceHead, DecoderConfig, PredictionSet, SetDecoder, predict_labels
from .encoder import EncodedSentence, EncoderConfig, TokenVocabulary, TransformerEncoder
from .errors import CheckpointError, ConfigError
from .graph import GcnStack, LabelGraph, QueryProjection
from .matching import COST_MODES

CHECKPOINT_VERSION = 1
HEADS = ("set_prediction", "bce")


@dataclass
class RunConfig:
    train_path: str | None = None
    valid_path: str | None = None
    test_path: str | None = None
    out_dir: str = "run_out"
    d_model: int = 64
    encoder_layers: int = 2
    encoder_heads: int = 4
    decoder_layers: int = 2
    decoder_heads: int = 4
    max_len: int = 64
    dropout: float = 0.0
    gcn_layers: int = 2
    gcn_activation: str = "relu"
    num_queries: int | None = None  # resolved from the training split when absent
    tau: float = 0.1
    p_neighbor: float = 0.25
    bc_weight: float = 0.1
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    use_gcn: bool = True
    use_bc: bool = True
    head: str = "set_prediction"
    cost_mode: str = "prob"
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.d_model <= 0:
            raise ConfigError("d_model must be positive")
        for dim_name in ("encoder_layers", "encoder_heads", "decoder_layers",
                         "decoder_heads", "gcn_layers", "epochs", "batch_size"):
            if getattr(self, dim_name) < 1:
                raise ConfigError(f"{dim_name} must be at least 1")
        if self.d_model % self.encoder_heads or self.d_model % self.decoder_heads:
            raise ConfigError("d_model must be divisible by both head counts")
        if self.max_len < 3:
            raise ConfigError("max_len must be at least 3")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.gcn_activation not in ("relu", "leaky_relu"):
            raise ConfigError(f"unknown gcn_activation {self.gcn_activation!r}")
        if self.num_queries is not None and self.num_queries < 1:
            raise ConfigError("num_queries must be positive when given")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")
        if not 0.0 < self.p_neighbor < 1.0:
            raise ConfigError(f"p_neighbor must be in (0, 1), got {self.p_neighbor}")
        if self.bc_weight < 0.0:
            raise ConfigError(f"bc_weight must be nonnegative, got {self.bc_weight}")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.cost_mode not in COST_MODES:
            raise ConfigError(f"cost_mode must be one of {COST_MODES}, got {self.cost_mode!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def effective_bc_weight(self) -> float:
        return self.bc_weight if self.use_bc else 0.0


def resolve_num_queries(config: RunConfig, corpus: Corpus) -> int:
    """Default slot count: largest training gold set plus two, capped at K."""
    if config.num_queries is not None:
        return config.num_queries
    largest = max(len(s.labels) for s in corpus.train)
    return min(largest + 2, corpus.label_vocab.size)


class Model(nn.Module):
    def __init__(self, rng: np.random.Generator, config: RunConfig,
                 label_vocab: LabelVocabulary, token_vocab: TokenVocabulary,
                 propagation: np.ndarray | None):
        super().__init__()
        if config.num_queries is None:
            raise ConfigError("num_queries must be resolved before model construction")
        self.config = config
        self.label_vocab = label_vocab
        self.token_vocab = token_vocab
        self.propagation = propagation
        k = label_vocab.size
        m = config.num_queries

        self.encoder = self.add_child("encoder", TransformerEncoder(rng, EncoderConfig(
            vocab_size=token_vocab.size, d_model=config.d_model,
            num_layers=config.encoder_layers, num_heads=config.encoder_heads,
            max_len=config.max_len, dropout=config.dropout)))

        self.gcn = None
        self.query_projection = None
        self.query_table = None
        self.decoder = None
        self.bce = None
        if config.head == "set_prediction":
            if config.use_gcn:
                if propagation is None:
                    raise ConfigError("graph propagation matrix required when the GCN is enabled")
                if propagation.shape != (k, k):
                    raise ConfigError(f"propagation matrix {propagation.shape} does not cover {k} labels")
                self.gcn = self.add_child("gcn", GcnStack(
                    rng, propagation, num_layers=config.gcn_layers,
                    width=config.d_model, activation=config.gcn_activation))
                self.query_projection = self.add_child(
                    "query_projection", QueryProjection(rng, num_queries=m, num_labels=k))
            else:
                self.query_table = self.register(
                    "query_table", nn.uniform_init(rng, config.d_model, (m, config.d_model)))
            self.decoder = self.add_child("decoder", SetDecoder(rng, DecoderConfig(
                num_queries=m, num_classes=k + 1, d_model=config.d_model,
                num_layers=config.decoder_layers, num_heads=config.decoder_heads,
                dropout=config.dropout)))
        else:
            self.bce = self.add_child("bce", BceHead(rng, config.d_model, k))

    def queries(self) -> T.Tensor:
        """Decoder input embeddings: graph-propagated or plain learnable."""
        if self.gcn is not None:
            return self.query_projection(self.gcn())
        return self.query_table

    def encode(self, tokens: np.ndarray, mask: np.ndarray | None = None,
               rng: np.random.Generator | None = None, train: bool = False) -> EncodedSentence:
        return self.encoder.encode(tokens, attention_mask=mask, rng=rng, train=train)

    def decode(self, queries: T.Tensor, memory: EncodedSentence,
               rng: np.random.Generator | None = None, train: bool = False) -> PredictionSet:
        return self.decoder.decode(queries, memory, rng=rng, train=train)

    def predict(self, tokens: np.ndarray, mask: np.ndarray | None = None) -> set[int]:
        with T.no_grad():
            memory = self.encode(tokens, mask)
            if self.bce is not None:
                return self.bce.predict(memory)
            return predict_labels(self.decode(self.queries(), memory))

    def trainable_parameters(self) -> dict[str, T.Tensor]:
        params = self.named_parameters()
        if self.config.freeze_encoder:
            params = {name: p for name, p in params.items() if not name.startswith("encoder.")}
        return params


def build_model(config: RunConfig, corpus: Corpus, graph: LabelGraph | None = None) -> Model:
    """Resolve the slot count, build the label graph if needed, assemble."""
    resolved = RunConfig.from_dict({**config.to_dict(),
                                    "num_queries": resolve_num_queries(config, corpus)})
    propagation = None
    if resolved.head == "set_prediction" and resolved.use_gcn:
        if graph is None:
            graph = LabelGraph(corpus.train, corpus.label_vocab,
                               tau=resolved.tau, p_neighbor=resolved.p_neighbor)
        propagation = graph.propagation
    rng = np.random.default_rng(resolved.seed)
    return Model(rng, resolved, corpus.label_vocab, corpus.token_vocab, propagation)


def save_checkpoint(path, model: Model) -> None:
    arrays = {
        "__version__": np.array(CHECKPOINT_VERSION),
        "__config__": np.array(json.dumps(model.config.to_dict())),
        "__labels__": np.array(list(model.label_vocab.names)),
        "__tokens__": np.array(model.token_vocab.to_list()),
        "__propagation__": (model.propagation if model.propagation is not None
                            else np.zeros((0, 0))),
    }
    for name, param in model.named_parameters().items():
        arrays[f"param/{name}"] = param.data
    np.savez(path, **arrays)


def load_checkpoint(path) -> Model:
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with archive:
        if "__version__" not in archive:
            raise CheckpointError(f"{path} is not a model checkpoint")
        version = int(archive["__version__"])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})")
        config = RunConfig.from_dict(json.loads(str(archive["__config__"])))
        label_vocab = LabelVocabulary([str(n) for n in archive["__labels__"]])
        token_names = [str(n) for n in archive["__tokens__"]]
        token_vocab = TokenVocabulary(token_names[4:])
        propagation = archive["__propagation__"]
        if propagation.size == 0:
            propagation = None
        model = Model(np.random.default_rng(config.seed), config,
                      label_vocab, token_vocab, propagation)
        stored = {key[len("param/"):] for key in archive.files if key.startswith("param/")}
        current = set(model.named_parameters())
        if stored != current:
            raise CheckpointError("checkpoint parameters do not match the configured architecture")
        for name, param in model.named_parameters().items():
            value = archive[f"param/{name}"]
            if value.shape != param.data.shape:
                raise CheckpointError(
                    f"checkpoint parameter {name} has shape {value.shape}, model expects {param.data.shape}")
            param.data = value.astype(np.float64)
    return model
