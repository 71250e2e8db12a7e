"""Sentence encoder: whitespace tokenizer plus a small trainable transformer.

The encoder maps a token-id sequence (CLS ... SEP, right-padded) to one
contextual vector per position.  Padding positions are masked out of
attention with a large negative bias, which drives their weights to exactly
zero, so padded and unpadded encodings of the same sentence agree bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, tensor as T
from .errors import ConfigError, ContractError, VocabularyError

PAD, CLS, SEP, OOV = 0, 1, 2, 3
_SPECIALS = ("<pad>", "<cls>", "<sep>", "<oov>")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace."""
    return text.lower().split()


class TokenVocabulary:
    """Token-to-index map with four reserved leading slots.

    Indices 0..3 are PAD, CLS, SEP, OOV in that order; corpus tokens follow
    in first-occurrence order, which makes rebuilds from the same split
    reproducible.
    """

    def __init__(self, tokens: list[str]):
        self._names = list(_SPECIALS) + list(tokens)
        self._index = {name: i for i, name in enumerate(self._names)}
        if len(self._index) != len(self._names):
            raise VocabularyError("vocabulary contains duplicate tokens")

    @classmethod
    def build(cls, texts) -> "TokenVocabulary":
        seen: dict[str, None] = {}
        for text in texts:
            for token in tokenize(text):
                seen.setdefault(token, None)
        return cls(list(seen))

    @property
    def size(self) -> int:
        return len(self._names)

    def token_id(self, token: str) -> int:
        return self._index.get(token, OOV)

    def encode(self, text: str) -> np.ndarray:
        """Token ids wrapped in CLS ... SEP; unknown tokens map to OOV."""
        body = [self._index.get(tok, OOV) for tok in tokenize(text)]
        return np.array([CLS] + body + [SEP], dtype=np.intp)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for name in self._names:
                fh.write(name + "\n")

    @classmethod
    def load(cls, path) -> "TokenVocabulary":
        with open(path, encoding="utf-8") as fh:
            names = [line.rstrip("\n") for line in fh]
        if names[:4] != list(_SPECIALS):
            raise VocabularyError(f"vocabulary file {path} lacks the four reserved tokens")
        return cls(names[4:])

    def to_list(self) -> list[str]:
        return list(self._names)


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    num_layers: int = 2
    num_heads: int = 4
    max_len: int = 64
    dropout: float = 0.0

    def __post_init__(self):
        if self.vocab_size < len(_SPECIALS):
            raise ConfigError(f"vocab_size must cover the {len(_SPECIALS)} reserved tokens")
        if self.d_model <= 0 or self.num_layers <= 0:
            raise ConfigError("d_model and num_layers must be positive")
        if self.d_model % self.num_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        if self.max_len < 3:
            raise ConfigError("max_len must leave room for CLS and SEP plus one token")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class EncodedSentence:
    hidden: T.Tensor          # (l, d_model)
    attention_mask: np.ndarray  # (l,) of {0., 1.}


class TransformerEncoder(nn.Module):
    """Token + position embeddings, pre-norm self-attention blocks, final norm."""

    def __init__(self, rng: np.random.Generator, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.truncation_count = 0
        d = config.d_model
        self.token_embed = self.register("token_embed", nn.uniform_init(rng, d, (config.vocab_size, d)))
        self.pos_embed = self.register("pos_embed", nn.uniform_init(rng, d, (config.max_len, d)))
        self.layers = []
        for i in range(config.num_layers):
            layer = nn.TransformerLayer(rng, d, config.num_heads, dropout=config.dropout)
            self.layers.append(self.add_child(f"layer{i}", layer))
        self.final_norm = self.add_child("final_norm", nn.LayerNorm(d))

    def clip(self, tokens: np.ndarray) -> np.ndarray:
        """Right-truncate over-length sequences, keeping CLS and SEP.

        Counts each clipped sentence so silent shortening never happens."""
        tokens = np.asarray(tokens, dtype=np.intp)
        if tokens.shape[0] <= self.config.max_len:
            return tokens
        self.truncation_count += 1
        return np.concatenate([tokens[: self.config.max_len - 1], tokens[-1:]])

    def encode(self, tokens: np.ndarray, attention_mask: np.ndarray | None = None,
               rng: np.random.Generator | None = None, train: bool = False) -> EncodedSentence:
        tokens = self.clip(tokens)
        length = tokens.shape[0]
        if attention_mask is None:
            attention_mask = np.ones(length, dtype=np.float64)
        else:
            attention_mask = np.asarray(attention_mask, dtype=np.float64)[:length]
        if tokens.min() < 0 or tokens.max() >= self.config.vocab_size:
            raise VocabularyError(f"token id out of range for vocabulary of {self.config.vocab_size}")
        real = int(attention_mask.sum())
        if real < 2 or tokens[0] != CLS or tokens[real - 1] != SEP:
            raise ContractError("encoder input must start with CLS and end with SEP")
        x = T.embedding(self.token_embed, tokens) + T.embedding(self.pos_embed, np.arange(length))
        bias = nn.mask_to_bias(attention_mask)
        for layer in self.layers:
            x = layer(x, self_bias=bias, rng=rng, train=train)
        return EncodedSentence(hidden=self.final_norm(x), attention_mask=attention_mask)
