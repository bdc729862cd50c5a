"""Three-stage orchestration: margin training with per-epoch pseudo-labeling,
retraining-free new-label adaptation, and store-backed inference, plus the
evaluation metrics and the leave-class-out experiment protocol.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import embedder as emb
from . import store as hstore
from .embedder import AdamState, EmbedderConfig, EmbedderParams, TrainConfig
from .errors import (
    DimensionMismatchError,
    DuplicateLabelError,
    EmptyDatasetError,
    LengthMismatchError,
    NumericError,
    TooFewClassesError,
)
from .featurizer import Featurizer, Sample
from .losses import LossConfig, inference_probabilities
from .numeric import l2_normalize
from .store import HashStore, StoreConfig


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    loss: LossConfig = LossConfig()
    embedder: EmbedderConfig = EmbedderConfig()
    train: TrainConfig = TrainConfig()
    p_pseudo: float = Field(default=0.05, ge=0.0, le=1.0)
    prune_retention: float = Field(default=1.0, gt=0.0, le=1.0)
    store: StoreConfig = StoreConfig()
    human_label_name: str = "human"


@dataclass
class DatasetSplit:
    """Labeled train/test splits plus an unlabeled pool.

    pool_hidden_labels exists for oracle evaluation of pseudo-labeling only;
    nothing in the training path reads it.
    """

    train_labeled: list[Sample]
    test_clean: list[Sample]
    test_augmented: list[Sample]
    unlabeled_pool: list[Sample]
    pool_hidden_labels: dict[str, str] = field(default_factory=dict)


@dataclass
class Metrics:
    task_a_accuracy: float
    task_a_f1: float
    task_b_accuracy: float
    task_b_macro_f1: float
    per_class_recall: dict[str, float]

    def as_dict(self) -> dict:
        return {
            "task_a_accuracy": self.task_a_accuracy,
            "task_a_f1": self.task_a_f1,
            "task_b_accuracy": self.task_b_accuracy,
            "task_b_macro_f1": self.task_b_macro_f1,
            "per_class_recall": self.per_class_recall,
        }


@dataclass
class TrainedModel:
    """Everything inference needs: network params plus the fitted featurizer."""

    params: EmbedderParams
    featurizer: Featurizer


@dataclass
class Prediction:
    sample_id: str
    label: str
    confidence: float


@dataclass
class ExperimentReport:
    config: dict
    excluded_classes: list[str]
    adaptation_exemplars: int
    pre_adaptation: dict[str, Metrics]
    post_adaptation: dict[str, Metrics]
    epoch_log: list[dict]
    seed: int
    wall_seconds: float

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "excluded_classes": self.excluded_classes,
            "adaptation_exemplars": self.adaptation_exemplars,
            "pre_adaptation": {k: m.as_dict() for k, m in self.pre_adaptation.items()},
            "post_adaptation": {k: m.as_dict() for k, m in self.post_adaptation.items()},
            "epoch_log": self.epoch_log,
            "seed": self.seed,
            "wall_seconds": self.wall_seconds,
        }


def select_pseudo(
    pool_predictions: list[tuple[Sample, str, float]], p: float
) -> list[tuple[Sample, str]]:
    """Per predicted label, the ceil(p * n_label) most confident predictions.

    Selection is recomputed from scratch on every call; confidence ties break
    by ascending sample id.
    """
    if p <= 0.0 or not pool_predictions:
        return []
    by_label: dict[str, list[tuple[Sample, str, float]]] = {}
    for item in pool_predictions:
        by_label.setdefault(item[1], []).append(item)
    chosen: list[tuple[Sample, str]] = []
    for label in sorted(by_label):
        group = by_label[label]
        # guard float dust so p * n that is an exact integer stays that integer
        take = min(len(group), max(1, math.ceil(p * len(group) - 1e-9)))
        group.sort(key=lambda item: (-item[2], item[0].id))
        chosen.extend((sample, lab) for sample, lab, _ in group[:take])
    return chosen


def _train_matrices(
    featurizer: Featurizer, samples: list[Sample], labels: list[str]
) -> tuple[np.ndarray, np.ndarray]:
    index = {name: i for i, name in enumerate(labels)}
    X = featurizer.transform_matrix(samples)
    y = np.asarray([index[s.label] for s in samples], dtype=np.int64)
    return X, y


def run_training_stage(
    data: DatasetSplit, cfg: PipelineConfig
) -> tuple[TrainedModel, HashStore, list[dict]]:
    """Train the embedder with per-epoch pseudo-labeling, then build the store.

    Per epoch: one training pass over labeled plus current pseudo rows, then a
    fresh pool prediction and pseudo re-selection. After the final epoch all
    labeled training samples are embedded, stored, and optionally pruned.
    Hidden pool labels are never read.
    """
    if not data.train_labeled:
        raise EmptyDatasetError("train_labeled split is empty")
    labels = sorted({s.label for s in data.train_labeled})
    if len(labels) < 2:
        raise TooFewClassesError("training needs at least two classes")

    featurizer = Featurizer.fit(data.train_labeled)
    X, y = _train_matrices(featurizer, data.train_labeled, labels)

    emb_cfg = cfg.embedder
    if emb_cfg.input_dim is None:
        emb_cfg = emb_cfg.model_copy(update={"input_dim": X.shape[1]})
    elif emb_cfg.input_dim != X.shape[1]:
        raise DimensionMismatchError(
            f"configured input_dim {emb_cfg.input_dim} != featurized dim {X.shape[1]}"
        )
    params = emb.init_params(emb_cfg, n_classes=len(labels))
    adam = AdamState.init(params)

    use_pool = cfg.p_pseudo > 0.0 and len(data.unlabeled_pool) > 0
    X_pool = featurizer.transform_matrix(data.unlabeled_pool) if use_pool else None

    log: list[dict] = []
    X_ps: np.ndarray | None = None
    y_ps: np.ndarray | None = None
    best_loss = np.inf
    stale = 0
    for epoch in range(cfg.train.epochs):
        stats = emb.train_epoch(
            params, adam, X, y, X_ps, y_ps, cfg.loss, cfg.train, epoch
        )
        if not np.isfinite(stats.mean_loss):
            raise NumericError(f"loss became non-finite at epoch {epoch}")
        log.append(
            {
                "epoch": epoch,
                "mean_loss": stats.mean_loss,
                "train_accuracy": stats.accuracy,
                "pseudo_count": stats.pseudo_count,
            }
        )
        if use_pool:
            pool_emb = emb.embed_all(params, X_pool)
            probs = inference_probabilities(params.head, pool_emb, cfg.loss)
            preds = np.argmax(probs, axis=1)
            confs = probs[np.arange(len(preds)), preds]
            predictions = [
                (sample, labels[preds[i]], float(confs[i]))
                for i, sample in enumerate(data.unlabeled_pool)
            ]
            picked = select_pseudo(predictions, cfg.p_pseudo)
            if picked:
                row_of = {s.id: i for i, s in enumerate(data.unlabeled_pool)}
                rows = [row_of[sample.id] for sample, _ in picked]
                X_ps = X_pool[rows]
                y_ps = np.asarray(
                    [labels.index(lab) for _, lab in picked], dtype=np.int64
                )
            else:
                X_ps = y_ps = None
        if cfg.train.patience is not None:
            if stats.mean_loss < best_loss - 1e-12:
                best_loss, stale = stats.mean_loss, 0
            else:
                stale += 1
                if stale >= cfg.train.patience:
                    break

    digests = emb.embed_all(params, X)
    store = HashStore(dim=params.emb_dim, k=cfg.store.k, labels=list(labels))
    for name in labels:
        mask = y == labels.index(name)
        hstore.add_entries(store, name, digests[mask])
    if cfg.prune_retention < 1.0:
        store = hstore.prune(store, cfg.prune_retention)
    return TrainedModel(params=params, featurizer=featurizer), store, log


def run_adaptation_stage(
    model: TrainedModel, store: HashStore, new_class_name: str, new_samples: list[Sample]
) -> HashStore:
    """Add one class to the store from exemplar samples; the model is frozen."""
    if new_class_name in store.labels:
        raise DuplicateLabelError(f"label {new_class_name!r} already in store")
    X = model.featurizer.transform_matrix(new_samples)
    digests = emb.embed_all(model.params, X)
    return hstore.add_class(store, new_class_name, digests)


def run_inference_stage(
    model: TrainedModel, store: HashStore, samples: list[Sample]
) -> list[Prediction]:
    """featurize -> embed -> k-NN classify, order preserved."""
    if store.entry_count == 0:
        raise EmptyDatasetError("store has no entries")
    if not samples:
        return []
    X = model.featurizer.transform_matrix(samples)
    digests = emb.embed_all(model.params, X)
    out = []
    for sample, digest in zip(samples, digests):
        label, confidence = hstore.classify(store, digest)
        out.append(Prediction(sample_id=sample.id, label=label, confidence=confidence))
    return out


def _f1(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def evaluate(
    predictions: list[str], truths: list[str], human_label_name: str
) -> Metrics:
    """Binary human-vs-AI metrics (human positive) plus multi-class metrics.

    The multi-class macro-F1 averages over the labels present in the truths,
    so a class the store cannot predict counts as pure misses rather than
    being dropped.
    """
    if len(predictions) != len(truths):
        raise LengthMismatchError("predictions and truths differ in length")
    n = len(truths)
    if n == 0:
        raise LengthMismatchError("nothing to evaluate")

    pred_h = [p == human_label_name for p in predictions]
    true_h = [t == human_label_name for t in truths]
    a_correct = sum(p == t for p, t in zip(pred_h, true_h))
    tp = sum(p and t for p, t in zip(pred_h, true_h))
    fp = sum(p and not t for p, t in zip(pred_h, true_h))
    fn = sum(t and not p for p, t in zip(pred_h, true_h))

    classes = sorted(set(truths))
    b_correct = sum(p == t for p, t in zip(predictions, truths))
    per_class_recall = {}
    f1s = []
    for c in classes:
        c_tp = sum(p == c and t == c for p, t in zip(predictions, truths))
        c_fp = sum(p == c and t != c for p, t in zip(predictions, truths))
        c_fn = sum(t == c and p != c for p, t in zip(predictions, truths))
        per_class_recall[c] = c_tp / (c_tp + c_fn) if c_tp + c_fn else 0.0
        f1s.append(_f1(c_tp, c_fp, c_fn))
    return Metrics(
        task_a_accuracy=a_correct / n,
        task_a_f1=_f1(tp, fp, fn),
        task_b_accuracy=b_correct / n,
        task_b_macro_f1=float(np.mean(f1s)),
        per_class_recall=per_class_recall,
    )


def evaluate_predictions(
    preds: list[Prediction], samples: list[Sample], human_label_name: str
) -> Metrics:
    return evaluate(
        [p.label for p in preds], [s.label for s in samples], human_label_name
    )


def run_feature_baseline(
    data: DatasetSplit, cfg: PipelineConfig
) -> tuple[Featurizer, HashStore]:
    """Untrained baseline: normalized raw feature vectors straight into a store."""
    featurizer = Featurizer.fit(data.train_labeled)
    labels = sorted({s.label for s in data.train_labeled})
    X = featurizer.transform_matrix(data.train_labeled)
    store = HashStore(dim=X.shape[1], k=cfg.store.k, labels=list(labels))
    for name in labels:
        rows = [x for x, s in zip(X, data.train_labeled) if s.label == name]
        hstore.add_entries(store, name, np.stack([l2_normalize(r) for r in rows]))
    return featurizer, store


def classify_features(
    featurizer: Featurizer, store: HashStore, samples: list[Sample]
) -> list[Prediction]:
    out = []
    for sample in samples:
        vec = l2_normalize(featurizer.transform(sample).values)
        label, confidence = hstore.classify(store, vec)
        out.append(Prediction(sample_id=sample.id, label=label, confidence=confidence))
    return out


def leave_k_out_experiment(
    data: DatasetSplit,
    cfg: PipelineConfig,
    excluded_classes: list[str],
    adaptation_exemplars: int = 50,
) -> ExperimentReport:
    """Train without the excluded classes, measure, adapt them back, re-measure.

    Adaptation exemplars are the first N training samples of each excluded
    class in dataset order; both test splits are evaluated before and after.
    """
    start = time.perf_counter()
    all_labels = sorted({s.label for s in data.train_labeled})
    unknown = [c for c in excluded_classes if c not in all_labels]
    if unknown:
        raise EmptyDatasetError(f"excluded classes not in training data: {unknown}")
    if len(all_labels) - len(excluded_classes) < 2:
        raise TooFewClassesError("need at least two remaining classes")

    kept = [s for s in data.train_labeled if s.label not in excluded_classes]
    filtered = DatasetSplit(
        train_labeled=kept,
        test_clean=data.test_clean,
        test_augmented=data.test_augmented,
        unlabeled_pool=data.unlabeled_pool,
    )
    model, store, log = run_training_stage(filtered, cfg)

    def measure() -> dict[str, Metrics]:
        out = {}
        for split_name, samples in (
            ("test_clean", data.test_clean),
            ("test_augmented", data.test_augmented),
        ):
            if samples:
                preds = run_inference_stage(model, store, samples)
                out[split_name] = evaluate_predictions(
                    preds, samples, cfg.human_label_name
                )
        return out

    pre = measure()
    for name in excluded_classes:
        exemplars = [s for s in data.train_labeled if s.label == name]
        exemplars = exemplars[:adaptation_exemplars]
        store = run_adaptation_stage(model, store, name, exemplars)
    post = measure()

    return ExperimentReport(
        config=cfg.model_dump(mode="json"),
        excluded_classes=list(excluded_classes),
        adaptation_exemplars=adaptation_exemplars,
        pre_adaptation=pre,
        post_adaptation=post,
        epoch_log=log,
        seed=cfg.embedder.seed,
        wall_seconds=time.perf_counter() - start,
    )
