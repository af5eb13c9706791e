"""Shared affine classifier over identity embeddings, segmentation losses, mIoU.

The classifier maps 16-d rendered (or per-Gaussian) identity features to
(K+1)-way logits; rows past ``num_active_classes`` are inert capacity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidLabelError, ShapeError
from .fields import Classifier, GaussianField


@dataclass
class ClassifierGrads:
    weight: np.ndarray
    bias: np.ndarray

    @staticmethod
    def zeros(classifier: Classifier) -> "ClassifierGrads":
        return ClassifierGrads(np.zeros_like(classifier.weight), np.zeros_like(classifier.bias))

    def add_scaled(self, other: "ClassifierGrads", scale: float = 1.0) -> None:
        self.weight += scale * other.weight
        self.bias += scale * other.bias


def classify(features: np.ndarray, classifier: Classifier) -> np.ndarray:
    """Active-row logits for features of shape (..., in_features)."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != classifier.weight.shape[1]:
        raise ShapeError(
            f"feature width {features.shape[-1]} != classifier input {classifier.weight.shape[1]}"
        )
    k1 = classifier.num_active_classes
    return features @ classifier.weight[:k1].T + classifier.bias[:k1]


def classify_backward(grad_logits: np.ndarray, features: np.ndarray,
                      classifier: Classifier) -> tuple[np.ndarray, ClassifierGrads]:
    """Backprop through the affine head: returns (grad_features, classifier grads)."""
    k1 = classifier.num_active_classes
    flat_gl = grad_logits.reshape(-1, k1)
    flat_f = np.asarray(features, dtype=np.float64).reshape(-1, classifier.weight.shape[1])
    grads = ClassifierGrads.zeros(classifier)
    grads.weight[:k1] = flat_gl.T @ flat_f
    grads.bias[:k1] = flat_gl.sum(axis=0)
    grad_features = (flat_gl @ classifier.weight[:k1]).reshape(features.shape)
    return grad_features, grads


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def cross_entropy(logits: np.ndarray, labels: np.ndarray,
                  num_classes: int) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its logit gradient.

    ``logits``: (..., num_classes); ``labels``: integer array of the leading shape.
    """
    labels = np.asarray(labels)
    if logits.shape[:-1] != labels.shape:
        raise ShapeError(f"logits {logits.shape} incompatible with labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidLabelError(
            f"labels must lie in [0, {num_classes}), got max {labels.max()}"
        )
    n = max(labels.size, 1)
    log_probs = _log_softmax(logits)
    flat_lp = log_probs.reshape(-1, num_classes)
    flat_labels = labels.reshape(-1)
    value = -float(flat_lp[np.arange(flat_labels.size), flat_labels].sum()) / n
    grad = np.exp(flat_lp)
    grad[np.arange(flat_labels.size), flat_labels] -= 1.0
    return value, (grad / n).reshape(logits.shape)


def loss_2d(logits: np.ndarray, gt_mask: np.ndarray) -> tuple[float, np.ndarray]:
    """Per-pixel cross-entropy of classified rendered features vs the GT mask."""
    return cross_entropy(logits, gt_mask, logits.shape[-1])


def knn_pseudo_labels(field: GaussianField, classifier: Classifier,
                      k_neighbors: int = 5) -> np.ndarray:
    """Majority vote of argmax-classified labels among each Gaussian's k nearest
    neighbors (self excluded, ties to the lowest label)."""
    n = len(field)
    if n <= k_neighbors:
        raise ShapeError(f"need more than {k_neighbors} Gaussians, got {n}")
    own = np.argmax(classify(field.embeddings, classifier), axis=1)
    tree = cKDTree(field.positions)
    _, idx = tree.query(field.positions, k=k_neighbors + 1)
    k1 = classifier.num_active_classes
    votes = np.zeros((n, k1), dtype=np.int64)
    for col in range(1, k_neighbors + 1):  # column 0 is the query point itself
        np.add.at(votes, (np.arange(n), own[idx[:, col]]), 1)
    return np.argmax(votes, axis=1)  # argmax breaks ties toward the lowest label


def loss_3d(field: GaussianField, classifier: Classifier, k_neighbors: int = 5,
            pseudo_labels: np.ndarray | None = None
            ) -> tuple[float, np.ndarray, ClassifierGrads]:
    """Cross-entropy of per-Gaussian logits against k-NN majority pseudo-labels.

    Pseudo-labels are constants (no gradient through the vote); pass a cached
    array to skip the neighbor search.
    """
    if pseudo_labels is None:
        pseudo_labels = knn_pseudo_labels(field, classifier, k_neighbors)
    logits = classify(field.embeddings, classifier)
    value, grad_logits = cross_entropy(logits, pseudo_labels, classifier.num_active_classes)
    grad_embeddings, cls_grads = classify_backward(grad_logits, field.embeddings, classifier)
    return value, grad_embeddings, cls_grads


def predict_mask(feature_image: np.ndarray, classifier: Classifier) -> np.ndarray:
    """Argmax instance mask from a rendered feature image."""
    return np.argmax(classify(feature_image, classifier), axis=-1).astype(np.int32)


def miou(pred_masks: list[np.ndarray], gt_masks: list[np.ndarray], num_classes: int) -> float:
    """Mean IoU over the classes present in the ground truth."""
    if len(pred_masks) != len(gt_masks):
        raise ShapeError("pred/gt mask list lengths disagree")
    inter = np.zeros(num_classes, dtype=np.int64)
    union = np.zeros(num_classes, dtype=np.int64)
    present = np.zeros(num_classes, dtype=bool)
    for pred, gt in zip(pred_masks, gt_masks):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ShapeError(f"mask shapes disagree: {pred.shape} vs {gt.shape}")
        for c in range(num_classes):
            p = pred == c
            g = gt == c
            inter[c] += np.count_nonzero(p & g)
            union[c] += np.count_nonzero(p | g)
            present[c] |= bool(g.any())
    if not present.any():
        return 0.0
    return float(np.mean(inter[present] / np.maximum(union[present], 1)))
