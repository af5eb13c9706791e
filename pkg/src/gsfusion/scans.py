"""Scene scans (one observed object configuration) and dataset directory IO.

Dataset layout written by ``gen-scene`` and consumed by ``train``/``eval``:

    dataset/
      spec.json            scene-generator parameters
      canonical_field.igf  ground-truth field in the canonical configuration
      cameras.json         shared camera rig
      scans/scan_000/      one directory per training scan
        poses.json         per-object canonical->scan rigid transforms (+centers)
        images/view_000.png ...
        masks/view_000.png
        depth/view_000.f32
        alpha/view_000.f32
      test/                held-out scan, same layout as scans/scan_*
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .cameras import Camera, load_rig, save_rig
from .errors import InvalidFieldError
from .geometry import RigidTransform, load_pose_set, save_pose_set
from .imgio import load_image, load_mask, load_raster, save_image, save_mask, save_raster


@dataclass
class SceneScan:
    """Multi-view observations of one static object configuration."""

    cameras: list[Camera]
    images: list[np.ndarray]  # per camera, HxWx3 float in [0, 1]
    masks: list[np.ndarray]  # per camera, HxW int labels
    object_poses: dict[int, RigidTransform]  # canonical -> this scan, label >= 1
    object_centers: dict[int, np.ndarray] = dc_field(default_factory=dict)  # in scan config
    depths: list[np.ndarray] | None = None
    alphas: list[np.ndarray] | None = None

    @property
    def num_views(self) -> int:
        return len(self.cameras)

    def validate(self, num_objects: int | None = None) -> None:
        if not (len(self.cameras) == len(self.images) == len(self.masks)):
            raise InvalidFieldError("cameras/images/masks lengths disagree")
        for extra in (self.depths, self.alphas):
            if extra is not None and len(extra) != len(self.cameras):
                raise InvalidFieldError("depth/alpha list length disagrees with cameras")
        if num_objects is not None:
            for mask in self.masks:
                if mask.min() < 0 or mask.max() > num_objects:
                    raise InvalidFieldError("mask labels exceed the number of objects")


def save_scan(scan: SceneScan, scan_dir: str | Path) -> None:
    scan_dir = Path(scan_dir)
    for sub in ("images", "masks", "depth", "alpha"):
        (scan_dir / sub).mkdir(parents=True, exist_ok=True)
    save_pose_set(scan.object_poses, scan_dir / "poses.json", centers=scan.object_centers)
    for v in range(scan.num_views):
        name = f"view_{v:03d}"
        save_image(scan.images[v], scan_dir / "images" / f"{name}.png")
        save_mask(scan.masks[v], scan_dir / "masks" / f"{name}.png")
        if scan.depths is not None:
            save_raster(scan.depths[v], scan_dir / "depth" / f"{name}.f32")
        if scan.alphas is not None:
            save_raster(scan.alphas[v], scan_dir / "alpha" / f"{name}.f32")


def load_scan(scan_dir: str | Path, cameras: list[Camera]) -> SceneScan:
    scan_dir = Path(scan_dir)
    poses, centers = load_pose_set(scan_dir / "poses.json")
    images, masks, depths, alphas = [], [], [], []
    for v in range(len(cameras)):
        name = f"view_{v:03d}"
        images.append(load_image(scan_dir / "images" / f"{name}.png"))
        masks.append(load_mask(scan_dir / "masks" / f"{name}.png"))
        depth_path = scan_dir / "depth" / f"{name}.f32"
        alpha_path = scan_dir / "alpha" / f"{name}.f32"
        if depth_path.exists():
            depths.append(load_raster(depth_path))
        if alpha_path.exists():
            alphas.append(load_raster(alpha_path))
    return SceneScan(
        cameras=cameras,
        images=images,
        masks=masks,
        object_poses=poses,
        object_centers=centers,
        depths=depths or None,
        alphas=alphas or None,
    )


def save_shared_rig(cameras: list[Camera], dataset_dir: str | Path) -> None:
    save_rig(cameras, Path(dataset_dir) / "cameras.json")


def load_dataset_scans(dataset_dir: str | Path) -> tuple[list[Camera], list[SceneScan], SceneScan | None]:
    """Load the shared rig, the training scans, and the test scan if present."""
    dataset_dir = Path(dataset_dir)
    cameras = load_rig(dataset_dir / "cameras.json")
    scan_dirs = sorted((dataset_dir / "scans").glob("scan_*"))
    scans = [load_scan(d, cameras) for d in scan_dirs]
    test_dir = dataset_dir / "test"
    test_scan = load_scan(test_dir, cameras) if test_dir.exists() else None
    return cameras, scans, test_scan
