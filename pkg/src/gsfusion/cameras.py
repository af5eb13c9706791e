"""Pinhole cameras (x right, y down, z forward) and rig IO."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError

ROTATION_ORTHONORMAL_TOL = 1e-6


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray  # (3,) world-to-camera
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.ascontiguousarray(self.rotation, dtype=np.float64)
        self.translation = np.ascontiguousarray(self.translation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidParameterError("focal lengths must be positive")
        err = np.max(np.abs(self.rotation.T @ self.rotation - np.eye(3)))
        if err > ROTATION_ORTHONORMAL_TOL:
            raise InvalidParameterError(f"camera rotation not orthonormal (|R^T R - I| = {err:.2e})")

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, np.float64) @ self.rotation.T + self.translation

    @property
    def center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """World-space viewing direction (+z row of the rotation)."""
        return self.rotation[2]


def look_at(position: np.ndarray, target: np.ndarray, fx: float, fy: float,
            width: int, height: int, up: np.ndarray | None = None) -> Camera:
    """Camera at ``position`` whose optical axis passes through ``target``."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm == 0.0:
        raise InvalidParameterError("camera position coincides with target")
    forward = forward / norm
    if up is None:
        up = np.array([0.0, 0.0, 1.0])
        if abs(forward @ up) > 1.0 - 1e-9:  # looking straight up/down: pick any horizontal up
            up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return Camera(
        fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0,
        rotation=rotation, translation=-rotation @ position,
        width=width, height=height,
    )


def save_rig(cameras: list[Camera], path: str | Path) -> None:
    doc = {
        "cameras": [
            {
                "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
                "width": cam.width, "height": cam.height,
                "rotation": cam.rotation.tolist(),
                "translation": cam.translation.tolist(),
            }
            for cam in cameras
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def load_rig(path: str | Path) -> list[Camera]:
    doc = json.loads(Path(path).read_text())
    return [
        Camera(
            fx=entry["fx"], fy=entry["fy"], cx=entry["cx"], cy=entry["cy"],
            rotation=np.array(entry["rotation"], dtype=np.float64),
            translation=np.array(entry["translation"], dtype=np.float64),
            width=int(entry["width"]), height=int(entry["height"]),
        )
        for entry in doc["cameras"]
    ]
