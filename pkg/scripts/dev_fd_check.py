"""Development scratch: finite-difference check of the rasterizer backward."""

import sys
import time

import numpy as np

from gsfusion.cameras import look_at
from gsfusion.fields import EMBED_DIM, GaussianField
from gsfusion.geometry import quat_normalize
from gsfusion.projection import DEFAULT_RASTER_CONFIG
from gsfusion.rasterizer import render, render_backward, render_reference


def random_scene(rng, n=10, width=16, height=16):
    positions = rng.uniform(-0.8, 0.8, size=(n, 3))
    positions[:, 2] = 0.0
    field = GaussianField(
        positions=positions,
        log_scales=rng.uniform(np.log(0.08), np.log(0.3), size=(n, 3)),
        rotations=quat_normalize(rng.normal(size=(n, 4))),
        opacity_logits=rng.uniform(-2.0, 1.5, size=n),
        colors=rng.uniform(0.1, 0.9, size=(n, 3)),
        embeddings=rng.normal(0, 0.5, size=(n, EMBED_DIM)),
        labels=rng.integers(0, 3, size=n).astype(np.int32),
        num_objects=2,
    )
    cam = look_at(np.array([0.3, -2.5, 1.8]), np.array([0.0, 0.0, 0.0]),
                  fx=20.0, fy=20.0, width=width, height=height)
    return field, cam


def loss_and_grads(field, cam, bg, weights):
    out = render(field, cam, bg)
    wc, wf, wa, wd = weights
    val = float(np.sum(out.color * wc) + np.sum(out.feature * wf)
                + np.sum(out.alpha * wa) + np.sum(out.depth * wd))
    grads = render_backward(out, wc, wf, wa, wd)
    return val, grads


def loss_only(field, cam, bg, weights):
    out = render(field, cam, bg, retain_intermediates=False)
    wc, wf, wa, wd = weights
    return float(np.sum(out.color * wc) + np.sum(out.feature * wf)
                 + np.sum(out.alpha * wa) + np.sum(out.depth * wd))


def main():
    rng = np.random.default_rng(0)
    field, cam = random_scene(rng)
    bg = np.array([0.1, 0.2, 0.3])
    h, w = cam.height, cam.width
    weights = (
        rng.normal(size=(h, w, 3)),
        rng.normal(size=(h, w, EMBED_DIM)) * 0.3,
        rng.normal(size=(h, w)),
        rng.normal(size=(h, w)) * 0.1,
    )

    t0 = time.time()
    out = render(field, cam, bg)
    ref, _ = render_reference(field, cam, bg)
    print("compile+render", time.time() - t0, "s")
    print("tile-vs-ref max diff:",
          np.max(np.abs(out.color - ref.color)),
          np.max(np.abs(out.feature - ref.feature)),
          np.max(np.abs(out.alpha - ref.alpha)),
          np.max(np.abs(out.depth - ref.depth)))

    val, grads = loss_and_grads(field, cam, bg, weights)
    print("loss:", val)

    h_step = 1e-4
    worst = 0.0
    params = [
        ("positions", field.positions, grads.positions),
        ("log_scales", field.log_scales, grads.log_scales),
        ("rotations", field.rotations, grads.rotations),
        ("opacity_logits", field.opacity_logits, grads.opacity_logits),
        ("colors", field.colors, grads.colors),
        ("embeddings", field.embeddings, grads.embeddings),
    ]
    for name, arr, grad in params:
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        errs = []
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + h_step
            lp = loss_only(field, cam, bg, weights)
            flat[i] = orig - h_step
            lm = loss_only(field, cam, bg, weights)
            flat[i] = orig
            fd = (lp - lm) / (2 * h_step)
            rel = abs(gflat[i] - fd) / max(abs(fd), 1e-6)
            errs.append(rel)
        errs = np.array(errs)
        print(f"{name:16s} max rel err {errs.max():.3e} (median {np.median(errs):.3e})")
        worst = max(worst, errs.max())
    print("WORST:", worst)
    return 0 if worst < 1e-3 else 1


if __name__ == "__main__":
    sys.exit(main())
