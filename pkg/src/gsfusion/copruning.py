"""Collaborative co-pruning: symmetric nearest-neighbor consistency filtering.

A transferred Gaussian is marked when no Gaussian of the counterpart field
lies within tau of its center; marked Gaussians are removed from the
original (untransferred) fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidParameterError
from .fields import GaussianField
from .geometry import ObjectTransformMap
from .transfer import apply_transfer, inverse_map


def prune_mask(source_transferred: GaussianField, target: GaussianField,
               tau: float) -> np.ndarray:
    """True where a transferred Gaussian's nearest target neighbor is farther
    than ``tau`` (exact Euclidean nearest neighbor)."""
    if tau <= 0.0 or not np.isfinite(tau):
        raise InvalidParameterError(f"tau must be positive, got {tau}")
    if len(target) == 0:
        raise InvalidParameterError("cannot prune against an empty target field")
    if len(source_transferred) == 0:
        return np.zeros(0, dtype=bool)
    distances, _ = cKDTree(target.positions).query(source_transferred.positions)
    return distances > tau


@dataclass
class CopruneReport:
    mask_i: np.ndarray  # over the original field_i
    mask_j: np.ndarray
    removed_per_label_i: dict[int, int]
    removed_per_label_j: dict[int, int]


def _per_label_counts(field: GaussianField, mask: np.ndarray) -> dict[int, int]:
    return {
        int(label): int(np.count_nonzero(mask & (field.labels == label)))
        for label in range(field.num_objects + 1)
    }


def coprune(field_i: GaussianField, field_j: GaussianField,
            transforms_ij: ObjectTransformMap, tau: float
            ) -> tuple[GaussianField, GaussianField, CopruneReport]:
    """Prune both fields symmetrically: i is checked against j in state j, and
    j against i in state i; survivors keep their original order."""
    transforms_ji = inverse_map(transforms_ij)
    mask_i = prune_mask(apply_transfer(field_i, transforms_ij), field_j, tau)
    mask_j = prune_mask(apply_transfer(field_j, transforms_ji), field_i, tau)
    report = CopruneReport(
        mask_i=mask_i,
        mask_j=mask_j,
        removed_per_label_i=_per_label_counts(field_i, mask_i),
        removed_per_label_j=_per_label_counts(field_j, mask_j),
    )
    return field_i.select(~mask_i), field_j.select(~mask_j), report
