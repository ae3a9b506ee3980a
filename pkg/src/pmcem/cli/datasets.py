"""Synthetic clean datasets: 2-D point clouds and small procedural images."""

from __future__ import annotations

from collections.abc import Mapping
from typing import Any

import numpy as np

from ..errors import InvalidArgumentError
from ..numkit import Rng
from ..oracles import GmmPrior, gmm_sample, isotropic_gmm


def arc_gmm(n_components: int = 8, radius: float = 2.0, std: float = 0.2) -> GmmPrior:
    """Equal-weight components spaced along the upper half circle, shifted down by 1."""
    ang = np.linspace(0.0, np.pi, n_components)
    means = np.stack([radius * np.cos(ang), radius * np.sin(ang) - 1.0], axis=1)
    return isotropic_gmm(means, std)


def gmm_from_params(params: Mapping[str, Any]) -> GmmPrior:
    if "means" in params:
        return isotropic_gmm(params["means"], float(params.get("std", 0.2)), params.get("weights"))
    return arc_gmm(int(params.get("n_components", 8)), float(params.get("radius", 2.0)),
                   float(params.get("std", 0.2)))


def sample_rings(n: int, rng: Rng, radii=(1.0, 2.0), width: float = 0.15) -> np.ndarray:
    """Points uniform in angle with radius uniform in ``[r - width, r + width]`` for a random ring."""
    radii = np.asarray(radii, dtype=float)
    which = rng.integers(0, len(radii), size=n)
    r = radii[which] + width * (2.0 * rng.random(n) - 1.0)
    theta = 2.0 * np.pi * rng.random(n)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def toy_image(rng: Rng, size: int = 16) -> np.ndarray:
    """One grayscale image in [0, 1]: an anti-aliased disc or bar on a flat background."""
    bg = 0.2 * rng.random()
    fg = 0.6 + 0.4 * rng.random()
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    lo, hi = 0.25 * size, 0.75 * size
    if rng.random() < 0.5:
        cy, cx = lo + (hi - lo) * rng.random(2)
        radius = size * (0.15 + 0.15 * rng.random())
        dist = np.hypot(yy - cy, xx - cx) - radius
    else:
        centre = lo + (hi - lo) * rng.random()
        half_w = size * (0.06 + 0.1 * rng.random())
        half_len = size * (0.25 + 0.2 * rng.random())
        along_c = lo + (hi - lo) * rng.random()
        across, along = (yy, xx) if rng.random() < 0.5 else (xx, yy)
        dist = np.maximum(np.abs(across - centre) - half_w, np.abs(along - along_c) - half_len)
    cover = np.clip(0.5 - dist, 0.0, 1.0)
    return bg + (fg - bg) * cover


def generate(kind: str, n: int, rng: Rng, params: Mapping[str, Any] | None = None) -> np.ndarray:
    """Dataset rows: (n, 2) for point clouds, (n, size, size) for images."""
    params = dict(params or {})
    if n < 0:
        raise InvalidArgumentError("dataset size must be non-negative")
    if kind == "gmm2d":
        return gmm_sample(gmm_from_params(params), n, rng)
    if kind == "rings2d":
        return sample_rings(n, rng, params.get("radii", (1.0, 2.0)), float(params.get("width", 0.15)))
    if kind == "toy_images":
        size = int(params.get("size", 16))
        return np.stack([toy_image(rng, size) for _ in range(n)]) if n else np.zeros((0, size, size))
    raise InvalidArgumentError(f"unknown dataset kind {kind!r}")
