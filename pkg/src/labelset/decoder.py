"""Non-autoregressive set decoder and the independent-sigmoid baseline head.

The decoder receives m query embeddings and the encoded sentence, runs them
through transformer blocks (self-attention across queries, cross-attention
into the sentence), and reads out one probability distribution over the K
labels plus a reserved no-label class per query, all in a single parallel
pass.  Queries carry no positional encoding, so permuting them permutes the
outputs and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import nn, tensor as T
from .encoder import EncodedSentence
from .errors import ConfigError, ContractError

NULL_OFFSET = 1  # the no-label class sits at index K, one past the labels


@dataclass(frozen=True)
class DecoderConfig:
    num_queries: int
    num_classes: int          # K + 1, last index is the no-label class
    d_model: int = 64
    num_layers: int = 2
    num_heads: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.num_queries < 1:
            raise ConfigError("decoder needs at least one query slot")
        if self.num_classes < 2:
            raise ConfigError("decoder needs at least one real label plus the no-label class")
        if self.d_model % self.num_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")

    @property
    def null_index(self) -> int:
        return self.num_classes - NULL_OFFSET


@dataclass
class PredictionSet:
    """m rows of label probabilities, one per query slot."""

    distributions: T.Tensor  # (m, K+1)

    def __post_init__(self):
        data = self.distributions.data
        if data.ndim != 2:
            raise ContractError(f"prediction set must be a matrix, got shape {data.shape}")
        if (data <= 0.0).any():
            raise ContractError("prediction rows must be strictly positive")
        if np.abs(data.sum(axis=1) - 1.0).max() > 1e-12:
            raise ContractError("prediction rows must each sum to 1")

    @property
    def num_queries(self) -> int:
        return self.distributions.shape[0]

    @property
    def null_index(self) -> int:
        return self.distributions.shape[1] - NULL_OFFSET


class SetDecoder(nn.Module):
    def __init__(self, rng: np.random.Generator, config: DecoderConfig):
        super().__init__()
        self.config = config
        self.layers = []
        for i in range(config.num_layers):
            layer = nn.TransformerLayer(rng, config.d_model, config.num_heads,
                                        dropout=config.dropout, cross=True)
            self.layers.append(self.add_child(f"layer{i}", layer))
        self.final_norm = self.add_child("final_norm", nn.LayerNorm(config.d_model))
        self.head = self.add_child("head", nn.Linear(rng, config.d_model, config.num_classes))

    def decode(self, queries: T.Tensor, memory: EncodedSentence,
               rng: np.random.Generator | None = None, train: bool = False) -> PredictionSet:
        if queries.shape != (self.config.num_queries, self.config.d_model):
            raise ConfigError(
                f"queries shaped {queries.shape}, decoder expects "
                f"({self.config.num_queries}, {self.config.d_model})")
        memory_bias = nn.mask_to_bias(memory.attention_mask)
        x = queries
        for layer in self.layers:
            x = layer(x, memory=memory.hidden, memory_bias=memory_bias, rng=rng, train=train)
        logits = self.head(self.final_norm(x))
        return PredictionSet(distributions=T.softmax(logits))


def predict_labels(ps: PredictionSet) -> set[int]:
    """Argmax each row, drop rows that chose the no-label class, deduplicate."""
    winners = ps.distributions.data.argmax(axis=1)
    return {int(w) for w in winners if w != ps.null_index}


class BceHead(nn.Module):
    """Baseline: K independent sigmoid probabilities read off the CLS vector."""

    def __init__(self, rng: np.random.Generator, d_model: int, num_labels: int):
        super().__init__()
        self.num_labels = num_labels
        self.readout = self.add_child("readout", nn.Linear(rng, d_model, num_labels))

    def logits(self, memory: EncodedSentence) -> T.Tensor:
        cls_state = T.embedding(memory.hidden, np.array([0]))
        return self.readout(cls_state).reshape(self.num_labels)

    def loss(self, memory: EncodedSentence, gold: set | tuple | list) -> T.Tensor:
        multi_hot = np.zeros(self.num_labels)
        for label in gold:
            if not 0 <= label < self.num_labels:
                raise ContractError(f"gold label {label} out of range for K={self.num_labels}")
            multi_hot[label] = 1.0
        return T.bce_with_logits(self.logits(memory), multi_hot).mean()

    def predict(self, memory: EncodedSentence) -> set[int]:
        probs = expit(self.logits(memory).data)
        return {int(i) for i in np.nonzero(probs >= 0.5)[0]}
