"""Inference: kNN prediction from retrieved neighbors, per-sample confidence
estimation, and adaptive combination with the classifier prediction.

The confidence of the kNN prediction is estimated from the labels the
classifier itself is sure about: threshold the classifier probabilities at
gamma to get a high-confidence label subset, then take the minimum kNN
probability over that subset as the mixing weight lambda. An empty subset
falls back to lambda = 0 (trust the classifier): with no anchor labels there
is nothing to judge the neighbors by.

Modes: "denn" runs the full adaptive pipeline; "classifier_only" and
"knn_only" pin lambda to 0 and 1; "fixed_lambda" uses a constant weight (the
non-adaptive baseline).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datastore import Datastore, Neighbor, retrieve_topk
from .encoder import EncoderState, classify, forward
from .mathops import softmax_temp

__all__ = [
    "INFERENCE_MODES",
    "InferenceConfig",
    "PredictionBundle",
    "combine",
    "debiased_lambda",
    "high_confidence_subset",
    "knn_predict",
    "predict",
]

INFERENCE_MODES = ("denn", "classifier_only", "knn_only", "fixed_lambda")


@dataclass
class InferenceConfig:
    k: int = 30
    tau2: float = 0.05
    gamma: float = 0.7
    mode: str = "denn"
    fixed_lambda_value: float = 0.5
    decision_threshold: float = 0.5
    confidence_aggregate: str = "min"  # "min" or "mean" over the subset

    def validate(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.tau2 <= 0.0:
            raise ValueError("tau2 must be > 0")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.mode not in INFERENCE_MODES:
            raise ValueError(f"mode must be one of {INFERENCE_MODES}, got {self.mode!r}")
        if not 0.0 <= self.fixed_lambda_value <= 1.0:
            raise ValueError("fixed_lambda_value must lie in [0, 1]")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ValueError("decision_threshold must lie in (0, 1)")
        if self.confidence_aggregate not in ("min", "mean"):
            raise ValueError("confidence_aggregate must be 'min' or 'mean'")


@dataclass
class PredictionBundle:
    """Everything one prediction produced, for auditability."""

    y_clf: np.ndarray
    y_knn: np.ndarray
    high_conf_mask: np.ndarray
    lam: float
    y_final: np.ndarray
    neighbors: list[Neighbor] = field(default_factory=list)

    def decisions(self, threshold: float = 0.5) -> np.ndarray:
        return (self.y_final >= threshold).astype(np.int8)


def knn_predict(neighbors: list[Neighbor], tau2: float) -> np.ndarray:
    """Similarity-softmax-weighted average of the neighbors' label vectors.

    beta = softmax(similarities / tau2); the result is a convex combination of
    0/1 vectors, so every entry lies in [0, 1].
    """
    if not neighbors:
        raise ValueError("knn_predict requires at least one neighbor")
    sims = np.array([n.similarity for n in neighbors], dtype=np.float64)
    beta = softmax_temp(sims, tau2)
    labels = np.stack([n.labels for n in neighbors]).astype(np.float64)
    # convex combination of 0/1 vectors; clip the odd 1+ulp rounding artifact
    return np.clip(beta @ labels, 0.0, 1.0)


def high_confidence_subset(y_clf, gamma: float) -> np.ndarray:
    """Binary mask of labels whose classifier probability meets gamma
    (inclusive threshold)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    return (np.asarray(y_clf, dtype=np.float64) >= gamma).astype(np.int8)


def debiased_lambda(y_knn, mask, aggregate: str = "min") -> float:
    """Confidence of the kNN prediction: the minimum (or mean) kNN probability
    over the high-confidence labels; 0 when the subset is empty."""
    y_knn = np.asarray(y_knn, dtype=np.float64)
    mask = np.asarray(mask)
    if y_knn.shape != mask.shape:
        raise ValueError(f"mask shape {mask.shape} != prediction shape {y_knn.shape}")
    selected = y_knn[mask > 0]
    if selected.size == 0:
        return 0.0
    if aggregate == "mean":
        return float(selected.mean())
    return float(selected.min())


def combine(lam: float, y_knn, y_clf) -> np.ndarray:
    """Convex combination lam * y_knn + (1 - lam) * y_clf."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    y_knn = np.asarray(y_knn, dtype=np.float64)
    y_clf = np.asarray(y_clf, dtype=np.float64)
    if y_knn.shape != y_clf.shape:
        raise ValueError("prediction vectors must have equal length")
    return np.clip(lam * y_knn + (1.0 - lam) * y_clf, 0.0, 1.0)


def predict(
    state: EncoderState,
    store: Datastore | None,
    sample,
    cfg: InferenceConfig,
) -> PredictionBundle:
    """Full pipeline for one sample: dropout-off forward, retrieval, kNN
    prediction, confidence estimation, combination.

    ``store`` may be None only in classifier_only mode (y_knn is then reported
    as all zeros with no neighbors).
    """
    cfg.validate()
    trace = forward(state, sample, dropout_mode="off")
    y_clf = classify(trace)

    if store is None:
        if cfg.mode != "classifier_only":
            raise ValueError(f"mode {cfg.mode!r} requires a datastore")
        neighbors: list[Neighbor] = []
        y_knn = np.zeros_like(y_clf)
    else:
        if store.dim != state.config.embed_dim or store.num_classes != state.config.num_classes:
            raise ValueError(
                f"datastore dims (d={store.dim}, C={store.num_classes}) do not match encoder "
                f"(d={state.config.embed_dim}, C={state.config.num_classes})"
            )
        neighbors = retrieve_topk(store, trace.embedding, cfg.k)
        y_knn = knn_predict(neighbors, cfg.tau2)

    mask = high_confidence_subset(y_clf, cfg.gamma)
    if cfg.mode == "classifier_only":
        lam = 0.0
    elif cfg.mode == "knn_only":
        lam = 1.0
    elif cfg.mode == "fixed_lambda":
        lam = cfg.fixed_lambda_value
    else:
        lam = debiased_lambda(y_knn, mask, aggregate=cfg.confidence_aggregate)
    y_final = combine(lam, y_knn, y_clf)
    return PredictionBundle(
        y_clf=y_clf,
        y_knn=y_knn,
        high_conf_mask=mask,
        lam=lam,
        y_final=y_final,
        neighbors=neighbors,
    )
