"""Adam optimizer, evaluation loop, and the deterministic training driver.

Determinism contract: all randomness flows from three generators derived
from the configured seed (parameter init, shuffling, dropout), the numeric
core replays gradients in a fixed order, and evaluation is pure, so two
runs with the same config and corpus produce bit-identical logs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Corpus, Dataset, batch_iterator
from .diversity import total_loss
from .errors import TrainingDiverged
from .matching import pad_gold
from .metrics import MetricAccumulator
from .model import Model, RunConfig, build_model, save_checkpoint


class Adam:
    """Adaptive-moment gradient descent over a named parameter dict.

    Update order is the dict's insertion order; state arrays are keyed by
    name so the walk is reproducible.
    """

    def __init__(self, params: dict[str, T.Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.second_moment = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        scale1 = 1.0 - self.beta1 ** self.step_count
        scale2 = 1.0 - self.beta2 ** self.step_count
        for name, param in self.params.items():
            g = param.grad
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            param.data -= self.lr * (m / scale1) / (np.sqrt(v / scale2) + self.eps)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad[...] = 0.0


def evaluate(model: Model, dataset: Dataset) -> dict[str, float]:
    """Micro metrics of the model's predictions over one split."""
    acc = MetricAccumulator(model.label_vocab.size)
    for batch in batch_iterator(dataset, 1, clip=model.encoder.clip):
        sample = batch.samples[0]
        pred = model.predict(batch.tokens[0], batch.mask[0])
        acc.accumulate(set(sample.labels), pred)
    return acc.finalize()


def batch_loss(model: Model, batch, queries, dropout_rng, train: bool) -> T.Tensor:
    """Mean per-sample objective over one padded batch, on the active tape."""
    config = model.config
    pieces = []
    for row, sample in enumerate(batch.samples):
        memory = model.encode(batch.tokens[row], batch.mask[row], rng=dropout_rng, train=train)
        if model.bce is not None:
            piece = model.bce.loss(memory, sample.labels)
        else:
            ps = model.decode(queries, memory, rng=dropout_rng, train=train)
            gold = pad_gold(sample.labels, config.num_queries, model.label_vocab.null_index)
            piece = total_loss(gold, ps, config.effective_bc_weight, config.cost_mode)
        pieces.append(piece.reshape(1))
    return T.concat(pieces).mean()


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_f1: float
    valid_hamming: float


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_valid_f1: float = -1.0
    best_epoch: int = -1
    checkpoint_path: str | None = None


def train(model: Model, corpus: Corpus, out_dir: str | None = None,
          log_stream=None) -> TrainResult:
    """Optimize the model, tracking the best validation micro-F1.

    Writes the best checkpoint and a JSONL epoch log under ``out_dir`` when
    given.  A non-finite batch loss aborts with the best checkpoint already
    on disk.
    """
    config = model.config
    shuffle_rng = np.random.default_rng(config.seed + 1)
    dropout_rng = np.random.default_rng(config.seed + 2)
    optimizer = Adam(model.trainable_parameters(), lr=config.learning_rate)
    result = TrainResult()
    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.checkpoint_path = os.path.join(out_dir, "best.npz")
        log_fh = open(os.path.join(out_dir, "train_log.jsonl"), "w", encoding="utf-8")
    try:
        for epoch in range(1, config.epochs + 1):
            epoch_losses = []
            for batch in batch_iterator(corpus.train, config.batch_size,
                                        rng=shuffle_rng, clip=model.encoder.clip):
                T.reset_tape()
                queries = model.queries() if model.bce is None else None
                loss = batch_loss(model, batch, queries, dropout_rng, train=True)
                value = float(loss.data)
                if not np.isfinite(value):
                    kept = (f"best checkpoint is from epoch {result.best_epoch}"
                            if result.best_epoch > 0 else "no checkpoint was saved")
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}; {kept}")
                optimizer.zero_grad()
                T.backward(loss)
                optimizer.step()
                epoch_losses.append(value)
            T.reset_tape()
            valid_report = evaluate(model, corpus.valid)
            record = EpochRecord(epoch=epoch,
                                 train_loss=float(np.mean(epoch_losses)),
                                 valid_f1=valid_report["f1"],
                                 valid_hamming=valid_report["hamming_loss"])
            result.history.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record.__dict__) + "\n")
                log_fh.flush()
            if log_stream is not None:
                log_stream.write(
                    f"epoch {record.epoch:3d}  loss {record.train_loss:.4f}  "
                    f"valid F1 {record.valid_f1:.4f}  HL {record.valid_hamming:.4f}\n")
            if record.valid_f1 > result.best_valid_f1:
                result.best_valid_f1 = record.valid_f1
                result.best_epoch = epoch
                if result.checkpoint_path is not None:
                    save_checkpoint(result.checkpoint_path, model)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result


def run_training(config: RunConfig, corpus: Corpus, out_dir: str | None = None,
                 log_stream=None) -> tuple[Model, TrainResult]:
    model = build_model(config, corpus)
    return model, train(model, corpus, out_dir=out_dir, log_stream=log_stream)
