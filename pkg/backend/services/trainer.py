"""
Training loop for one per-CWE classifier.

Adam over mean batch cross entropy. A batch is cut into fixed-size shards;
each shard runs on its own Tape (optionally in a thread pool) with a dropout
stream seeded from (seed, step, shard), and shard gradients are summed in
shard order, so the worker count never changes the result.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from dotenv import dotenv_values
from pydantic import BaseModel, Field, field_validator

from services.autodiff import backward, grad_check
from services.ensemble import metrics
from services.errors import DatasetError, Diverged
from services.ggnn import (
    DEFAULT_HOPS,
    EncodedGraph,
    GraphBatch,
    Hyperparameters,
    ModelState,
    Variant,
    Vocabulary,
    batch_loss,
    encode_graph,
    init_model,
    predict,
)
from services.records import CweLabel, parse_cwe
from services.synthetic import six_node_graph

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """Training configuration; file values < command-line overrides."""
    d: int = Field(128, ge=1)
    d_edge: int = Field(128, ge=1)
    hops: Optional[int] = Field(None, ge=0, description="Defaults to the per-CWE hop count")
    dropout: float = Field(0.3, ge=0.0, lt=1.0)
    lr: float = Field(0.001, ge=0.0)
    batch: int = Field(64, ge=1)
    epochs: int = Field(20, ge=1)
    seed: int = 0
    cwe: Optional[CweLabel] = None
    variant: Variant = Variant.EDGE_AWARE
    tie_edge_types: bool = False
    min_freq: int = Field(3, ge=1)
    vocab_cap: Optional[int] = Field(None, ge=2)
    shard_size: int = Field(16, ge=1)
    workers: int = Field(1, ge=1)
    augment_ops: str = Field("all", description="Mutant families joining train: all, none, or e.g. rn,ai")

    @field_validator("cwe", mode="before")
    @classmethod
    def _parse_cwe(cls, value):
        if value is None or isinstance(value, CweLabel):
            return value
        return parse_cwe(value)

    def resolved_hops(self) -> int:
        if self.hops is not None:
            return self.hops
        return DEFAULT_HOPS.get(self.cwe, 4) if self.cwe else 4

    def hyperparameters(self, vocab_size: int) -> Hyperparameters:
        return Hyperparameters(d=self.d, d_edge=self.d_edge, hops=self.resolved_hops(), dropout=self.dropout,
                               lr=self.lr, batch=self.batch, variant=self.variant,
                               tie_edge_types=self.tie_edge_types, vocab_size=vocab_size)


def load_train_config(path: Optional[str] = None, overrides: Optional[dict[str, Any]] = None,
                      defaults: Optional[dict[str, Any]] = None) -> TrainConfig:
    """defaults < key=value file (dotenv syntax) < non-None overrides."""
    values: dict[str, Any] = dict(defaults or {})
    if path:
        if not Path(path).is_file():
            raise FileNotFoundError(f"training config not found: {path}")
        values.update({k.strip().lower(): v for k, v in dotenv_values(path).items() if v is not None and v != ""})
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return TrainConfig.model_validate(values)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in sorted(params):
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            params[name] -= update


def batch_gradients(params: dict[str, np.ndarray], graphs: Sequence[EncodedGraph], hyper: Hyperparameters,
                    seed: int, step: int, shard_size: int = 16, workers: int = 1,
                    train: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss and gradient over `graphs`, computed shard by shard."""
    shards = [list(graphs[i:i + shard_size]) for i in range(0, len(graphs), shard_size)]
    total = len(graphs)

    def run(indexed):
        index, shard = indexed
        rng = np.random.default_rng([seed, step, index])
        tape, loss = batch_loss(params, GraphBatch.from_graphs(shard), hyper, train=train, rng=rng)
        return loss.item(), backward(tape, loss), len(shard)

    if workers > 1 and len(shards) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, enumerate(shards)))
    else:
        results = [run(item) for item in enumerate(shards)]

    loss_sum = 0.0
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    for loss, shard_grads, n in results:
        weight = n / total
        loss_sum += loss * weight
        for k in grads:
            grads[k] += shard_grads[k] * weight
    return loss_sum, grads


@dataclass
class TrainResult:
    model: ModelState
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = 0.0


def evaluate_graphs(model: ModelState, graphs: Sequence[EncodedGraph]) -> dict[str, float]:
    if not graphs:
        return {"precision": 0.0, "recall": 0.0, "f1": 0.0, "accuracy": 0.0}
    probs = predict(graphs, model)
    preds = [int(p > 0.5) for p in probs]
    labels = [g.label for g in graphs]
    m = metrics(preds, labels)
    accuracy = sum(int(p == y) for p, y in zip(preds, labels)) / len(labels)
    return {"precision": m.precision, "recall": m.recall, "f1": m.f1, "accuracy": accuracy}


def train(train_graphs: Sequence[EncodedGraph], val_graphs: Sequence[EncodedGraph], config: TrainConfig,
          vocabulary: Sequence[str], model: Optional[ModelState] = None) -> TrainResult:
    hyper = config.hyperparameters(len(vocabulary))
    model = model or init_model(hyper, seed=config.seed, vocabulary=vocabulary)
    model.meta.update({"cwe": config.cwe.value if config.cwe else None, "variant": hyper.variant.value})
    optimizer = Adam(model.params, lr=config.lr)
    train_graphs = list(train_graphs)

    logger.info("=" * 60)
    logger.info(f"Training {hyper.variant.value} classifier"
                f"{' for ' + config.cwe.value if config.cwe else ''}: {len(train_graphs)} train / "
                f"{len(val_graphs)} validation graphs, hops={hyper.hops}, d={hyper.d}")
    logger.info("=" * 60)

    result = TrainResult(model=model.copy())
    best_f1 = -1.0
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_graphs))
        epoch_loss, batches = 0.0, 0
        for b, start in enumerate(range(0, len(order), config.batch)):
            batch = [train_graphs[i] for i in order[start:start + config.batch]]
            loss, grads = batch_gradients(model.params, batch, hyper, config.seed, step,
                                          config.shard_size, config.workers)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise Diverged(f"non-finite loss at epoch {epoch}, batch {b}")
            optimizer.step(model.params, grads)
            epoch_loss += loss
            batches += 1
            step += 1

        val = evaluate_graphs(model, val_graphs)
        row = {"epoch": epoch, "train_loss": epoch_loss / max(batches, 1),
               **{f"val_{k}": v for k, v in val.items()}}
        result.history.append(row)
        logger.info(f"Epoch {epoch}/{config.epochs}: loss={row['train_loss']:.4f} "
                    f"val_f1={val['f1']:.4f} val_acc={val['accuracy']:.4f}")
        if not val_graphs or val["f1"] > best_f1:
            best_f1 = val["f1"]
            result.model = model.copy()
            result.best_epoch = epoch
            result.best_val_f1 = val["f1"]

    result.model.meta.update({"best_epoch": result.best_epoch, "best_val_f1": result.best_val_f1})
    logger.info(f"✓ Best epoch {result.best_epoch} (val F1 {result.best_val_f1:.4f})")
    return result


def record_tokens(record: dict) -> list[str]:
    return [tok for node in record["nodes"] for tok in node["code"].split()]


def build_vocabulary(records: Iterable[dict], config: TrainConfig) -> Vocabulary:
    """Token vocabulary from train-split graph records only."""
    return Vocabulary.build((record_tokens(r) for r in records),
                            min_freq=config.min_freq, cap=config.vocab_cap)


def encode_records(records: Iterable[dict], vocab: Vocabulary) -> list[EncodedGraph]:
    return [encode_graph(r, vocab) for r in records]


def train_records(train_set: Sequence[dict], validation_set: Sequence[dict], config: TrainConfig) -> TrainResult:
    """Vocabulary, encoding and training for one CWE's graph records."""
    if not train_set:
        raise DatasetError("no training graphs for this classifier")
    vocab = build_vocabulary(train_set, config)
    logger.info(f"Vocabulary: {len(vocab)} tokens (min_freq={config.min_freq})")
    return train(encode_records(train_set, vocab), encode_records(validation_set, vocab), config, vocab.tokens)


def gradient_check(seed: int = 0, samples: int = 100, variant: Variant = Variant.EDGE_AWARE,
                   d: int = 8, hops: int = 2, dropout: float = 0.3) -> float:
    """Full-model loss against central differences on a six-node graph, dropout mask pinned."""
    record = six_node_graph(seed)
    vocab = Vocabulary.build([record_tokens(record)], min_freq=1)
    hyper = Hyperparameters(d=d, d_edge=d, hops=hops, dropout=dropout, variant=variant, vocab_size=len(vocab))
    model = init_model(hyper, seed=seed, vocabulary=vocab.tokens)
    batch = GraphBatch.from_graphs([encode_graph(record, vocab)])

    def loss_fn(params):
        return batch_loss(params, batch, hyper, train=True, rng=np.random.default_rng([seed, 1]))

    return grad_check(loss_fn, model.params, samples=samples, seed=seed)
