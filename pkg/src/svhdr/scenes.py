"""Procedural high-dynamic-range radiance maps for tests, demos and curve sweeps."""
import numpy as np


def synthetic_scene(seed, height=64, width=None, blobs=6, dynamic_range=1000.0):
    """Smooth RGB radiance map with light sources spanning ``dynamic_range``.

    A dim colour gradient background plus Gaussian blobs whose peak
    intensities are log-uniform between 1 and ``dynamic_range``. Values are
    nonnegative and the maximum equals ``dynamic_range``.
    """
    width = height if width is None else width
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    tint = rng.uniform(0.3, 1.0, size=3)
    direction = rng.uniform(-1, 1, size=2)
    ramp = 0.5 + 0.5 * np.tanh(2.0 * (direction[0] * (yy - 0.5) + direction[1] * (xx - 0.5)))
    scene = (0.2 + ramp)[..., None] * tint
    for _ in range(blobs):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        sigma = rng.uniform(0.04, 0.2)
        level = np.exp(rng.uniform(0.0, np.log(dynamic_range)))
        color = rng.uniform(0.4, 1.0, size=3)
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        scene = scene + level * g[..., None] * color
    scene *= dynamic_range / scene.max()
    return scene.astype(np.float64)


def scene_set(seed, count, size=64, **kwargs):
    return [synthetic_scene((seed, i), size, **kwargs) for i in range(count)]
