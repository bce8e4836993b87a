"""Classification metrics and time profiling."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .seqnet import bce_from_logits, dataset_logits, one_hot, predict

NUM_CLASSES = 3
INFERENCE_SAMPLES = 100


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    confusion: np.ndarray       # rows: true class, columns: predicted class
    n_samples: int
    loss: float | None = None

    def as_dict(self) -> dict:
        out = {"accuracy": self.accuracy, "precision": self.macro_precision,
               "recall": self.macro_recall, "confusion": self.confusion.tolist(),
               "n_samples": self.n_samples}
        if self.loss is not None:
            out["loss"] = self.loss
        return out


def confusion_matrix(labels, preds, num_classes: int = NUM_CLASSES) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def _safe_ratio(num, den):
    return np.divide(num, den, out=np.zeros(num.shape, dtype=np.float64), where=den > 0)


AVERAGES = ("macro", "micro", "weighted")


def averaged_precision_recall(cm: np.ndarray, average: str = "macro") -> tuple[float, float]:
    """Precision and recall from a confusion matrix; an undefined per-class ratio (0/0) counts as 0.

    ``macro`` is the unweighted class mean, ``weighted`` weights classes by
    true count, ``micro`` pools all decisions (and equals accuracy).
    """
    if average not in AVERAGES:
        raise ValueError(f"average must be one of {AVERAGES}, got {average!r}")
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(np.float64)
    if average == "micro":
        value = float(tp.sum() / cm.sum()) if cm.sum() else 0.0
        return value, value
    precision = _safe_ratio(tp, cm.sum(axis=0))
    recall = _safe_ratio(tp, cm.sum(axis=1))
    if average == "macro":
        return float(precision.mean()), float(recall.mean())
    support = cm.sum(axis=1)
    w = support / support.sum() if support.sum() else np.zeros_like(precision)
    return float(precision @ w), float(recall @ w)


def report_from_predictions(labels, preds, loss: float | None = None) -> EvalReport:
    """Accuracy plus macro precision/recall."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot evaluate on an empty test set")
    cm = confusion_matrix(labels, preds)
    precision, recall = averaged_precision_recall(cm, "macro")
    return EvalReport(float(np.trace(cm) / labels.size), precision, recall, cm, int(labels.size), loss)


def evaluate(params, embedding, token_ids, labels, with_loss: bool = True) -> EvalReport:
    ids = np.asarray(token_ids)
    if ids.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty test set")
    preds, value = predictions_and_loss(params, embedding, ids, labels)
    return report_from_predictions(labels, preds, value if with_loss else None)


def predictions_and_loss(params, embedding, token_ids, labels) -> tuple[np.ndarray, float]:
    """Argmax predictions and mean evaluation loss from a single forward pass."""
    logits = dataset_logits(params, embedding, token_ids)
    preds = np.argmax(expit(logits), axis=1)
    return preds, bce_from_logits(logits, one_hot(labels, logits.shape[1]))


def profile_inference(params, embedding, samples) -> float:
    """Mean wall-clock microseconds per single-sample prediction over exactly 100 samples.

    One extra warm-up prediction runs first and is not timed.
    """
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.shape[0] != INFERENCE_SAMPLES:
        raise ValueError(f"need exactly {INFERENCE_SAMPLES} samples, got shape {samples.shape}")
    predict(params, embedding, samples[:1])
    start = time.perf_counter()
    for row in samples:
        predict(params, embedding, row[None, :])
    return (time.perf_counter() - start) / INFERENCE_SAMPLES * 1e6


@dataclass
class TimeProfile:
    training_ms: float = 0.0
    overhead_ms: float = 0.0
    upload_ms: float = 0.0
    download_ms: float = 0.0
    inference_us_per_sample: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


CATEGORIES = ("training", "overhead", "upload", "download")


@dataclass
class Stopwatch:
    """Accumulates wall time per category; categories never overlap."""

    totals: dict = field(default_factory=lambda: dict.fromkeys(CATEGORIES, 0.0))

    @contextmanager
    def time(self, category: str):
        if category not in self.totals:
            raise KeyError(category)
        start = time.perf_counter()
        try:
            yield
        finally:
            self.totals[category] += (time.perf_counter() - start) * 1000.0

    def profile(self, inference_us: float = 0.0) -> TimeProfile:
        t = self.totals
        return TimeProfile(t["training"], t["overhead"], t["upload"], t["download"], inference_us)


def profile_round(timers) -> TimeProfile:
    """Average the per-client stopwatches of one round into a single profile.

    An empty list (no rounds run) gives the all-zero profile.
    """
    profiles = [t.profile() if isinstance(t, Stopwatch) else t for t in timers]
    if not profiles:
        return TimeProfile()
    n = len(profiles)
    return TimeProfile(*(sum(getattr(p, f) for p in profiles) / n for f in
                         ("training_ms", "overhead_ms", "upload_ms", "download_ms",
                          "inference_us_per_sample")))
