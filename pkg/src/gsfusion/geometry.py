"""Quaternions, rigid transforms, and per-object transform maps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError, InvalidTransformError

UNIT_NORM_TOL = 1e-6


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0) or not np.all(np.isfinite(q)):
        raise InvalidParameterError("quaternion must be finite and nonzero")
    return q / norm


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, wxyz convention. Broadcasts over leading axes."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a quaternion (normalized internally).

    Supports a single (4,) quaternion or a batch (..., 4); returns (..., 3, 3).
    """
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[..., 0, 1] = 2.0 * (x * y - w * z)
    m[..., 0, 2] = 2.0 * (x * z + w * y)
    m[..., 1, 0] = 2.0 * (x * y + w * z)
    m[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[..., 1, 2] = 2.0 * (y * z - w * x)
    m[..., 2, 0] = 2.0 * (x * z - w * y)
    m[..., 2, 1] = 2.0 * (y * z + w * x)
    m[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Quaternion (wxyz, w >= 0) of an orthonormal rotation matrix."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    if q[0] < 0.0:
        q = -q
    return quat_normalize(q)


def quat_about_z(angle: float) -> np.ndarray:
    """Quaternion rotating by ``angle`` radians about the +z axis."""
    half = 0.5 * float(angle)
    return np.array([np.cos(half), 0.0, 0.0, np.sin(half)])


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) transform: p -> R(rotation) @ p + translation."""

    rotation: np.ndarray  # (4,) unit quaternion wxyz
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "rotation", quat_normalize(np.asarray(self.rotation, dtype=np.float64)))
        t = np.asarray(self.translation, dtype=np.float64)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise InvalidParameterError("translation must be a finite 3-vector")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.matrix.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self ∘ other)(p) = self(other(p))."""
        return RigidTransform(
            quat_multiply(self.rotation, other.rotation),
            self.matrix @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        q_inv = quat_conjugate(self.rotation)
        return RigidTransform(q_inv, -(quat_to_matrix(q_inv) @ self.translation))

    def almost_equal(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        # q and -q encode the same rotation
        dq = min(
            np.max(np.abs(self.rotation - other.rotation)),
            np.max(np.abs(self.rotation + other.rotation)),
        )
        return bool(dq <= tol and np.max(np.abs(self.translation - other.translation)) <= tol)


@dataclass
class ObjectTransformMap:
    """Rigid transform per foreground object label; absent labels act as identity.

    Label 0 (background) is immutable and may never appear as a key.
    """

    transforms: dict[int, RigidTransform] = field(default_factory=dict)

    def __post_init__(self):
        for label in self.transforms:
            if int(label) < 1:
                raise InvalidTransformError(f"label {label} is not a foreground label")
        self.transforms = {int(k): v for k, v in self.transforms.items()}

    @staticmethod
    def identity() -> "ObjectTransformMap":
        return ObjectTransformMap({})

    def get(self, label: int) -> RigidTransform:
        return self.transforms.get(int(label), RigidTransform.identity())

    def labels(self) -> list[int]:
        return sorted(self.transforms)

    def __contains__(self, label: int) -> bool:
        return int(label) in self.transforms


def save_transform_map(tmap: ObjectTransformMap, path: str | Path) -> None:
    doc = {
        "transforms": [
            {
                "label": label,
                "quaternion_wxyz": tmap.transforms[label].rotation.tolist(),
                "translation": tmap.transforms[label].translation.tolist(),
            }
            for label in tmap.labels()
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_transform_map(path: str | Path) -> ObjectTransformMap:
    doc = json.loads(Path(path).read_text())
    return ObjectTransformMap(
        {
            int(entry["label"]): RigidTransform(
                np.array(entry["quaternion_wxyz"], dtype=np.float64),
                np.array(entry["translation"], dtype=np.float64),
            )
            for entry in doc["transforms"]
        }
    )


def save_pose_set(poses: dict[int, RigidTransform], path: str | Path,
                  centers: dict[int, np.ndarray] | None = None) -> None:
    """Per-object poses relative to the canonical frame, as a JSON document."""
    objects = []
    for label in sorted(poses):
        entry = {
            "label": int(label),
            "quaternion_wxyz": poses[label].rotation.tolist(),
            "translation": poses[label].translation.tolist(),
        }
        if centers is not None and label in centers:
            entry["center"] = np.asarray(centers[label], dtype=np.float64).tolist()
        objects.append(entry)
    Path(path).write_text(json.dumps({"objects": objects}, indent=2))


def load_pose_set(path: str | Path) -> tuple[dict[int, RigidTransform], dict[int, np.ndarray]]:
    doc = json.loads(Path(path).read_text())
    poses, centers = {}, {}
    for entry in doc["objects"]:
        label = int(entry["label"])
        poses[label] = RigidTransform(
            np.array(entry["quaternion_wxyz"], dtype=np.float64),
            np.array(entry["translation"], dtype=np.float64),
        )
        if "center" in entry:
            centers[label] = np.array(entry["center"], dtype=np.float64)
    return poses, centers
