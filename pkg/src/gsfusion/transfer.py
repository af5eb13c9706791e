"""Object-aware rigid transfer of Gaussian fields between scene states.

Foreground Gaussians move with their object's rigid transform (position and
orientation, hence covariance); background Gaussians are untouched. The
operation is differentiable w.r.t. the input Gaussian parameters with the
transforms held constant.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidPoseError, InvalidTransformError
from .fields import GaussianField
from .geometry import ObjectTransformMap, RigidTransform, quat_multiply
from .rasterizer import FieldGrads


def apply_transfer(field: GaussianField, transforms: ObjectTransformMap) -> GaussianField:
    """Move each foreground object by its transform; background is unchanged."""
    for label in transforms.labels():
        if label > field.num_objects:
            raise InvalidTransformError(
                f"transform for label {label} but field has {field.num_objects} objects"
            )
    out = field.copy()
    for label in transforms.labels():
        idx = np.flatnonzero(field.labels == label)
        if idx.size == 0:
            continue
        t = transforms.get(label)
        rot = t.matrix
        out.positions[idx] = field.positions[idx] @ rot.T + t.translation
        composed = quat_multiply(t.rotation[None, :], field.rotations[idx])
        out.rotations[idx] = composed / np.linalg.norm(composed, axis=1, keepdims=True)
    return out


def transfer_backward(grads: FieldGrads, transforms: ObjectTransformMap,
                      field: GaussianField) -> FieldGrads:
    """Pull gradients on the transferred field back to the original parameters."""
    out = FieldGrads(
        positions=grads.positions.copy(),
        log_scales=grads.log_scales.copy(),
        rotations=grads.rotations.copy(),
        opacity_logits=grads.opacity_logits.copy(),
        colors=grads.colors.copy(),
        embeddings=grads.embeddings.copy(),
    )
    for label in transforms.labels():
        idx = np.flatnonzero(field.labels == label)
        if idx.size == 0:
            continue
        t = transforms.get(label)
        out.positions[idx] = grads.positions[idx] @ t.matrix

        # q' = normalize(L(r) q): pull back through the unit-sphere projection
        # then through the (orthogonal) left-multiplication by r
        composed = quat_multiply(t.rotation[None, :], field.rotations[idx])
        norm = np.linalg.norm(composed, axis=1, keepdims=True)
        unit = composed / norm
        g = grads.rotations[idx]
        g_proj = (g - np.sum(g * unit, axis=1, keepdims=True) * unit) / norm
        # adjoint of q -> r*q is q -> conj(r)*q (L(r) is orthogonal for unit r)
        r_conj = t.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        out.rotations[idx] = quat_multiply(r_conj[None, :], g_proj)
    return out


def compose(a: ObjectTransformMap, b: ObjectTransformMap) -> ObjectTransformMap:
    """Per-object composition a ∘ b (apply b first). Missing labels are identity."""
    labels = set(a.labels()) | set(b.labels())
    return ObjectTransformMap({label: a.get(label).compose(b.get(label)) for label in labels})


def inverse_map(a: ObjectTransformMap) -> ObjectTransformMap:
    return ObjectTransformMap({label: a.get(label).inverse() for label in a.labels()})


def relative_transform(poses_i: dict[int, RigidTransform],
                       poses_j: dict[int, RigidTransform]) -> ObjectTransformMap:
    """Map moving each object from its placement under poses_i to poses_j."""
    if set(poses_i) != set(poses_j):
        missing = set(poses_i) ^ set(poses_j)
        raise InvalidPoseError(f"pose sets disagree on objects {sorted(missing)}")
    return ObjectTransformMap(
        {label: poses_j[label].compose(poses_i[label].inverse()) for label in poses_i}
    )
