"""Differentiable rendering of color, identity features, alpha, and depth.

``render`` is the production tile-based path and retains the intermediates
``render_backward`` needs; ``render_reference`` is the O(pixels x Gaussians)
per-pixel compositor used as the agreement oracle and for ground-truth
synthesis (it also emits dominant-contribution label maps).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from . import raster_kernels as rk
from .cameras import Camera
from .errors import StateError
from .fields import EMBED_DIM, GaussianField
from .projection import (
    DEFAULT_RASTER_CONFIG,
    ProjectionArrays,
    RasterizerConfig,
    project_field,
)


def set_worker_count(workers: int) -> None:
    """Bound the number of threads used by the tile kernels."""
    numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))


@dataclass
class RenderIntermediates:
    field: GaussianField
    camera: Camera
    background: np.ndarray
    config: RasterizerConfig
    proj: ProjectionArrays  # depth-sorted
    colors: np.ndarray  # gathered to projection order
    embeds: np.ndarray
    tile_starts: np.ndarray
    tile_entries: np.ndarray
    n_tiles_x: int
    n_tiles_y: int
    n_contrib: np.ndarray  # (H, W) entries scanned per pixel
    final_t: np.ndarray  # (H, W) transmittance after compositing


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    feature: np.ndarray  # (H, W, EMBED_DIM)
    alpha: np.ndarray  # (H, W)
    depth: np.ndarray  # (H, W) alpha-normalized expected depth
    intermediates: RenderIntermediates | None = None


@dataclass
class FieldGrads:
    """Per-parameter gradients for every Gaussian of a field."""

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors: np.ndarray
    embeddings: np.ndarray

    @staticmethod
    def zeros(field: GaussianField) -> "FieldGrads":
        n = len(field)
        return FieldGrads(
            positions=np.zeros((n, 3)),
            log_scales=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)),
            opacity_logits=np.zeros(n),
            colors=np.zeros((n, 3)),
            embeddings=np.zeros((n, EMBED_DIM)),
        )

    def add_scaled(self, other: "FieldGrads", scale: float = 1.0) -> None:
        self.positions += scale * other.positions
        self.log_scales += scale * other.log_scales
        self.rotations += scale * other.rotations
        self.opacity_logits += scale * other.opacity_logits
        self.colors += scale * other.colors
        self.embeddings += scale * other.embeddings


def _sort_by_depth(proj: ProjectionArrays) -> ProjectionArrays:
    order = np.argsort(proj.view_depth, kind="stable")
    return ProjectionArrays(
        source_index=proj.source_index[order],
        mean2d=proj.mean2d[order],
        cov2d=proj.cov2d[order],
        conic=proj.conic[order],
        view_depth=proj.view_depth[order],
        base_opacity=proj.base_opacity[order],
        bin_radius=proj.bin_radius[order],
    )


def _empty_output(camera: Camera, background: np.ndarray) -> tuple[np.ndarray, ...]:
    h, w = camera.height, camera.width
    color = np.broadcast_to(background, (h, w, 3)).copy()
    return (
        color,
        np.zeros((h, w, EMBED_DIM)),
        np.zeros((h, w)),
        np.zeros((h, w)),
    )


def render(field: GaussianField, camera: Camera, background_color: np.ndarray,
           config: RasterizerConfig = DEFAULT_RASTER_CONFIG,
           retain_intermediates: bool = True) -> RenderOutput:
    """Tile-based forward pass of the compositing equation."""
    bg = np.ascontiguousarray(background_color, dtype=np.float64)
    proj = _sort_by_depth(project_field(field, camera, config))
    h, w, ts = camera.height, camera.width, config.tile_size
    n_tiles_x = (w + ts - 1) // ts
    n_tiles_y = (h + ts - 1) // ts

    if len(proj) == 0:
        color, feat, alpha, depth = _empty_output(camera, bg)
        inter = RenderIntermediates(
            field, camera, bg, config, proj,
            np.zeros((0, 3)), np.zeros((0, EMBED_DIM)),
            np.zeros(n_tiles_x * n_tiles_y + 1, dtype=np.int64),
            np.zeros(0, dtype=np.int32), n_tiles_x, n_tiles_y,
            np.zeros((h, w), dtype=np.int32), np.ones((h, w)),
        ) if retain_intermediates else None
        return RenderOutput(color, feat, alpha, depth, inter)

    counts = rk.bin_count(proj.mean2d, proj.bin_radius, n_tiles_x, n_tiles_y, ts)
    tile_starts = np.zeros(counts.shape[0] + 1, dtype=np.int64)
    np.cumsum(counts, out=tile_starts[1:])
    tile_entries = rk.bin_fill(proj.mean2d, proj.bin_radius, n_tiles_x, n_tiles_y, ts, tile_starts)

    colors = np.ascontiguousarray(field.colors[proj.source_index])
    embeds = np.ascontiguousarray(field.embeddings[proj.source_index])

    out_color = np.empty((h, w, 3))
    out_feat = np.empty((h, w, EMBED_DIM))
    out_alpha = np.empty((h, w))
    out_depth = np.empty((h, w))
    out_ncontrib = np.zeros((h, w), dtype=np.int32)
    out_final_t = np.ones((h, w))

    rk.forward_tiles(
        proj.mean2d, proj.conic, proj.view_depth, proj.base_opacity, colors, embeds,
        tile_starts, tile_entries, w, h, ts, n_tiles_x, n_tiles_y, bg,
        config.alpha_clamp, config.transmittance_cutoff, config.contribution_cutoff,
        out_color, out_feat, out_alpha, out_depth, out_ncontrib, out_final_t,
    )

    inter = None
    if retain_intermediates:
        inter = RenderIntermediates(
            field, camera, bg, config, proj, colors, embeds,
            tile_starts, tile_entries, n_tiles_x, n_tiles_y, out_ncontrib, out_final_t,
        )
    return RenderOutput(out_color, out_feat, out_alpha, out_depth, inter)


def render_backward(output: RenderOutput,
                    grad_color: np.ndarray | None = None,
                    grad_feature: np.ndarray | None = None,
                    grad_alpha: np.ndarray | None = None,
                    grad_depth: np.ndarray | None = None) -> FieldGrads:
    """Analytic gradients of the rendered images w.r.t. all Gaussian parameters."""
    inter = output.intermediates
    if inter is None:
        raise StateError("render_backward requires intermediates retained by render()")
    field, camera, config = inter.field, inter.camera, inter.config
    h, w = camera.height, camera.width
    grad_color = np.zeros((h, w, 3)) if grad_color is None else np.ascontiguousarray(grad_color, np.float64)
    grad_feature = np.zeros((h, w, EMBED_DIM)) if grad_feature is None else np.ascontiguousarray(grad_feature, np.float64)
    grad_alpha = np.zeros((h, w)) if grad_alpha is None else np.ascontiguousarray(grad_alpha, np.float64)
    grad_depth = np.zeros((h, w)) if grad_depth is None else np.ascontiguousarray(grad_depth, np.float64)

    grads = FieldGrads.zeros(field)
    proj = inter.proj
    m = len(proj)
    if m == 0:
        return grads

    entry_grads = np.zeros((inter.tile_entries.shape[0], rk.ENTRY_GRAD_WIDTH))
    rk.backward_tiles(
        proj.mean2d, proj.conic, proj.view_depth, proj.base_opacity,
        inter.colors, inter.embeds, inter.tile_starts, inter.tile_entries,
        w, h, config.tile_size, inter.n_tiles_x, inter.n_tiles_y, inter.background,
        config.alpha_clamp, config.transmittance_cutoff, config.contribution_cutoff,
        output.alpha, output.depth, inter.n_contrib, inter.final_t,
        grad_color, grad_feature, grad_alpha, grad_depth, entry_grads,
    )

    # deterministic per-Gaussian reduction in ascending entry order
    entry_order = np.argsort(inter.tile_entries, kind="stable").astype(np.int64)
    gauss_counts = np.bincount(inter.tile_entries, minlength=m)
    gauss_starts = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(gauss_counts, out=gauss_starts[1:])
    gauss2d = np.zeros((m, rk.ENTRY_GRAD_WIDTH))
    rk.reduce_entry_grads(entry_grads, gauss_starts, entry_order, gauss2d)

    rk.project_backward(
        proj.source_index, gauss2d, field.positions, field.log_scales,
        field.rotations, field.opacities, camera.rotation, camera.translation,
        camera.fx, camera.fy, config.cov2d_dilation,
        grads.positions, grads.log_scales, grads.rotations, grads.opacity_logits,
        grads.colors, grads.embeddings,
    )
    return grads


def render_reference(field: GaussianField, camera: Camera, background_color: np.ndarray,
                     config: RasterizerConfig = DEFAULT_RASTER_CONFIG
                     ) -> tuple[RenderOutput, np.ndarray]:
    """Brute-force per-pixel compositor (oracle path, no backward).

    Returns the render output plus the dominant-contribution label map.
    """
    bg = np.ascontiguousarray(background_color, dtype=np.float64)
    proj = _sort_by_depth(project_field(field, camera, config))
    h, w = camera.height, camera.width
    if len(proj) == 0:
        color, feat, alpha, depth = _empty_output(camera, bg)
        return RenderOutput(color, feat, alpha, depth), np.zeros((h, w), dtype=np.int32)

    colors = np.ascontiguousarray(field.colors[proj.source_index])
    embeds = np.ascontiguousarray(field.embeddings[proj.source_index])
    labels = np.ascontiguousarray(field.labels[proj.source_index])

    out_color = np.empty((h, w, 3))
    out_feat = np.empty((h, w, EMBED_DIM))
    out_alpha = np.empty((h, w))
    out_depth = np.empty((h, w))
    out_label = np.zeros((h, w), dtype=np.int32)
    rk.reference_pixels(
        proj.mean2d, proj.conic, proj.view_depth, proj.base_opacity, colors, embeds, labels,
        w, h, bg, config.alpha_clamp, config.transmittance_cutoff, config.contribution_cutoff,
        out_color, out_feat, out_alpha, out_depth, out_label,
    )
    return RenderOutput(out_color, out_feat, out_alpha, out_depth), out_label
