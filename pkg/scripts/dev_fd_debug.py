"""Isolate the worst FD mismatches and test h-dependence."""

import numpy as np

from gsfusion.fields import EMBED_DIM, GaussianField
from gsfusion.geometry import quat_normalize
from gsfusion.rasterizer import render, render_backward

from dev_fd_check import random_scene, loss_only, loss_and_grads


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
    val, grads = loss_and_grads(field, cam, bg, weights)

    for name, arr, grad in [("rotations", field.rotations, grads.rotations),
                            ("positions", field.positions, grads.positions)]:
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.shape[0]):
            fds = {}
            for hs in (1e-3, 1e-4, 1e-5):
                orig = flat[i]
                flat[i] = orig + hs
                lp = loss_only(field, cam, bg, weights)
                flat[i] = orig - hs
                lm = loss_only(field, cam, bg, weights)
                flat[i] = orig
                fds[hs] = (lp - lm) / (2 * hs)
            fd = fds[1e-4]
            rel = abs(gflat[i] - fd) / max(abs(fd), 1e-6)
            if rel > 5e-4:
                print(f"{name}[{i // arr.shape[1]},{i % arr.shape[1]}] analytic={gflat[i]:+.8f} "
                      f"fd(1e-3)={fds[1e-3]:+.8f} fd(1e-4)={fds[1e-4]:+.8f} fd(1e-5)={fds[1e-5]:+.8f} rel={rel:.2e}")


if __name__ == "__main__":
    main()
