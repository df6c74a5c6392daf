"""Training loop, evaluation, and metric logging.

Training is plain shuffled mini-batch SGD at a constant learning rate. Every
epoch appends one metric row; the per-epoch shuffle stream is derived from
(seed, epoch) so a run resumed from a checkpoint replays the exact batches
the uninterrupted run would have seen.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import tensor as tz
from .analysis import track_node_distances
from .checkpoint import save_checkpoint
from .datasets import Dataset
from .metrics import accuracy, mean_average_precision
from .model import MeanPoolBaseline, VideoGraphConfig, VideoGraphModel
from .optim import SgdMomentum
from .synthetic import perturbation_indices
from .tensor import Tape, Tensor

METRIC_HEADER = ("epoch", "train_loss", "train_acc", "val_metric", "mean_node_distance")


def max_threads() -> int:
    """Internal parallelism cap; VIDEOGRAPH_THREADS overrides machine default."""
    env = os.environ.get("VIDEOGRAPH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"VIDEOGRAPH_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


@dataclass
class RunConfig:
    # model dimensions and wiring
    T: int = 16
    N: int = 8
    H: int = 1
    W: int = 1
    C: int = 16
    num_classes: int = 4
    t: int = 7
    n: int = 7
    num_embedding_layers: int = 1
    classifier_hidden: int = 64
    label_mode: str = "single"
    sigma_kind: str = "sigmoid"
    init_strategy: str = "random"
    # optimization
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-5
    # data and evaluation
    train_manifest: str | None = None
    val_manifest: str | None = None
    eval_perturbation: str = "natural"
    seed: int = 0

    def model_config(self) -> VideoGraphConfig:
        return VideoGraphConfig(T=self.T, N=self.N, H=self.H, W=self.W, C=self.C,
                                num_classes=self.num_classes, t=self.t, n=self.n,
                                num_embedding_layers=self.num_embedding_layers,
                                classifier_hidden=self.classifier_hidden,
                                label_mode=self.label_mode, sigma_kind=self.sigma_kind,
                                init_strategy=self.init_strategy, seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**known)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class MetricLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, train_acc: float,
               val_metric: float, mean_node_distance: float) -> None:
        if self.rows and epoch <= self.rows[-1]["epoch"]:
            raise ValueError(f"epoch {epoch} does not increase past {self.rows[-1]['epoch']}")
        self.rows.append({"epoch": int(epoch), "train_loss": float(train_loss),
                          "train_acc": float(train_acc), "val_metric": float(val_metric),
                          "mean_node_distance": float(mean_node_distance)})

    def column(self, name: str) -> list:
        return [row[name] for row in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRIC_HEADER)
        for row in self.rows:
            writer.writerow([row[k] if k == "epoch" else repr(row[k]) for k in METRIC_HEADER])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


@dataclass
class EvalResult:
    metric_name: str                  # "accuracy" | "mAP"
    metric: float
    scores: np.ndarray                # (V, K)
    predictions: np.ndarray           # (V,) argmax, single-label only
    labels: np.ndarray


def _batch_targets(dataset: Dataset, idx: np.ndarray):
    if dataset.label_mode == "single":
        return dataset.labels[idx]
    return dataset.labels[idx].astype(np.float64)


def _loss_mode(label_mode: str) -> str:
    return "single_label_ce" if label_mode == "single" else "multi_label_bce"


def _batch_metrics(model, dataset: Dataset, idx: np.ndarray, mode: str) -> tuple[Tensor, np.ndarray]:
    """Forward one batch; returns (loss tensor, raw scores)."""
    feats = np.stack([dataset.features[i] for i in idx])
    scores = model.forward_batch(Tensor(feats), mode=mode)
    targets = _batch_targets(dataset, idx)
    return tz.loss(scores, targets, _loss_mode(dataset.label_mode)), scores.data


def _node_distance(model) -> float:
    if isinstance(model, VideoGraphModel):
        return track_node_distances(model.transformed_nodes_array())
    return 0.0


def _epoch_pass(model, dataset: Dataset, batch_size: int, order: np.ndarray,
                optimizer: SgdMomentum | None, epoch: int) -> tuple[float, float]:
    """One pass over the dataset; trains when an optimizer is given.

    Returns (mean loss, accuracy-or-mAP over the pass, computed from
    train-mode outputs).
    """
    losses, all_scores, all_idx = [], [], []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        with Tape() as tape:
            batch_loss, scores = _batch_metrics(model, dataset, idx, mode="train")
            value = batch_loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch {start // batch_size}")
            if optimizer is not None:
                tape.backward(batch_loss)
        if optimizer is not None:
            optimizer.step()
        losses.append(value)
        all_scores.append(scores)
        all_idx.append(idx)

    scores = np.concatenate(all_scores)
    idx = np.concatenate(all_idx)
    if dataset.label_mode == "single":
        metric = accuracy(scores.argmax(axis=1), dataset.labels[idx])
    else:
        metric = mean_average_precision(scores, dataset.labels[idx])
    return float(np.mean(losses)), metric


def evaluate(model, dataset: Dataset, perturbation: str = "natural", seed: int = 0) -> EvalResult:
    """Eval-mode metrics with the sample time axes permuted as requested.

    Samples are independent, so they are mapped over a thread pool capped by
    VIDEOGRAPH_THREADS; results are collected in sample order, so the output
    does not depend on the thread count.
    """
    if model.label_mode != dataset.label_mode:
        raise ValueError(f"model is {model.label_mode}-label but dataset is {dataset.label_mode}-label")

    def score_one(i: int) -> np.ndarray:
        feats = dataset.features[i]
        idx = perturbation_indices(feats.shape[0], perturbation,
                                   seed=int(np.random.SeedSequence((seed, i)).generate_state(1)[0]))
        return model.eval_scores(feats[idx])

    workers = min(max_threads(), len(dataset))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = np.stack(list(pool.map(score_one, range(len(dataset)))))
    else:
        scores = np.stack([score_one(i) for i in range(len(dataset))])
    if dataset.label_mode == "single":
        predictions = scores.argmax(axis=1)
        return EvalResult("accuracy", accuracy(predictions, dataset.labels),
                          scores, predictions, dataset.labels)
    return EvalResult("mAP", mean_average_precision(scores, dataset.labels),
                      scores, scores.argmax(axis=1), dataset.labels)


def build_model(config: RunConfig, train_dataset: Dataset, baseline: bool = False):
    if baseline:
        return MeanPoolBaseline(config.model_config())
    feature_sample = None
    if config.init_strategy == "kmeans":
        cells = [f.reshape(-1, config.C) for f in train_dataset.features]
        feature_sample = np.concatenate(cells)
    return VideoGraphModel(config.model_config(), feature_sample=feature_sample)


def train(config: RunConfig, train_dataset: Dataset, val_dataset: Dataset | None = None,
          out_dir=None, model=None, optimizer: SgdMomentum | None = None,
          start_epoch: int = 0, baseline: bool = False):
    """Train a model; returns (model, MetricLog).

    When out_dir is given, writes a final checkpoint and metrics.csv there.
    Passing model/optimizer/start_epoch resumes a checkpointed run; epoch
    numbering and shuffling then continue the original stream.
    """
    if len(train_dataset) == 0:
        raise ValueError("training dataset is empty")
    if config.epochs < 1 or config.batch_size < 1:
        raise ValueError(f"epochs and batch_size must be positive; got "
                         f"{config.epochs}, {config.batch_size}")
    if config.label_mode != train_dataset.label_mode:
        raise ValueError(f"config is {config.label_mode}-label but the dataset is "
                         f"{train_dataset.label_mode}-label")
    if start_epoch >= config.epochs:
        raise ValueError(f"nothing to train: resumed at epoch {start_epoch} with "
                         f"config.epochs={config.epochs}")
    if val_dataset is None:
        train_dataset, val_dataset = train_dataset.split(val_fraction=0.2, seed=config.seed)

    if model is None:
        model = build_model(config, train_dataset, baseline=baseline)
    if optimizer is None:
        optimizer = SgdMomentum(model.named_parameters(), learning_rate=config.learning_rate,
                                momentum=config.momentum, weight_decay=config.weight_decay)

    def val_metric() -> float:
        return evaluate(model, val_dataset, perturbation="natural", seed=config.seed).metric

    log = MetricLog()
    if start_epoch == 0:
        # epoch 0: metrics of the untrained model (train-mode pass, no updates)
        order = np.arange(len(train_dataset))
        loss0, acc0 = _epoch_pass(model, train_dataset, config.batch_size, order,
                                  optimizer=None, epoch=0)
        log.append(0, loss0, acc0, val_metric(), _node_distance(model))

    for epoch in range(start_epoch + 1, config.epochs + 1):
        order = np.random.default_rng((config.seed, epoch)).permutation(len(train_dataset))
        loss, acc = _epoch_pass(model, train_dataset, config.batch_size, order,
                                optimizer=optimizer, epoch=epoch)
        log.append(epoch, loss, acc, val_metric(), _node_distance(model))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, optimizer, config.epochs, out_dir / "checkpoint",
                        config_snapshot=config.to_dict())
        log.write_csv(out_dir / "metrics.csv")
    return model, log
