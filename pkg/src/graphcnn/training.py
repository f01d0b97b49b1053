from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from graphcnn.data import LabeledDataset
from graphcnn.nn import functional as fn
from graphcnn.nn.module import Module
from graphcnn.nn.optim import AdamState, NumericalError, adam_step
from graphcnn.nn.tensor import Tensor


@dataclass
class TrainingTrace:
    train_loss: list[float] = field(default_factory=list)
    # (step, loss) pairs
    validation_loss: list[tuple[int, float]] = field(default_factory=list)
    epochs_completed: int = 0


@dataclass(frozen=True)
class TrainingSettings:
    epochs: int = 40
    batch_size: int = 100
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    validate_every: int = 20
    eval_chunk: int = 500

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.validate_every < 1 or self.eval_chunk < 1:
            raise ValueError(f"invalid training settings {self}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")


class TrainingAborted(NumericalError):
    def __init__(self, message: str, trace: TrainingTrace):
        super().__init__(message)
        self.trace = trace


def _logits_chunked(model: Module, prepared: np.ndarray, chunk: int) -> np.ndarray:
    parts = [model.forward_prepared(Tensor(prepared[i:i + chunk])).data
             for i in range(0, len(prepared), chunk)]
    return np.concatenate(parts, axis=0)


def _mean_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_norm - shifted[np.arange(len(labels)), labels]))


def predict(model: Module, signals: np.ndarray, chunk: int = 500) -> np.ndarray:
    """Arg-max class per sample; ties resolve to the lowest class index."""
    logits = _logits_chunked(model, model.prepare(signals), chunk)
    return np.argmax(logits, axis=1)


def evaluate_accuracy(model: Module, dataset: LabeledDataset, chunk: int = 500) -> float:
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(model, dataset.signals, chunk) == dataset.labels))


def train(model: Module, train_set: LabeledDataset, validation_set: LabeledDataset | None,
          settings: TrainingSettings = TrainingSettings(), rng_seed: int = 0) -> TrainingTrace:
    """Minibatch ADAM on mean cross-entropy.

    Batches are drawn from a fresh permutation each epoch; the last batch may
    be short.  A non-finite loss or gradient raises :class:`TrainingAborted`
    carrying the trace so far.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(rng_seed)
    state = AdamState(learning_rate=settings.learning_rate, beta1=settings.beta1, beta2=settings.beta2,
                      epsilon=settings.eps)
    params = model.parameters()
    prepared = model.prepare(train_set.signals)
    labels = train_set.labels
    val_prepared = model.prepare(validation_set.signals) if validation_set is not None and len(validation_set) else None
    trace = TrainingTrace()
    step = 0
    for _ in range(settings.epochs):
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), settings.batch_size):
            idx = order[start:start + settings.batch_size]
            model.zero_grad()
            loss = fn.cross_entropy(model.forward_prepared(Tensor(prepared[idx])), labels[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingAborted(f"non-finite training loss at step {step}", trace)
            loss.backward()
            try:
                adam_step(params, state)
            except NumericalError as exc:
                raise TrainingAborted(f"step {step}: {exc}", trace) from exc
            trace.train_loss.append(value)
            step += 1
            if val_prepared is not None and step % settings.validate_every == 0:
                logits = _logits_chunked(model, val_prepared, settings.eval_chunk)
                trace.validation_loss.append((step, _mean_loss(logits, validation_set.labels)))
        trace.epochs_completed += 1
    return trace
