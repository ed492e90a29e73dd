"""Desk-scale synthetic image task.

Three shape classes on small grayscale canvases (horizontal bar, vertical
bar, disk), with randomized geometry and additive noise. The proxy pool is
drawn from the same generative family but under a fixed shift recipe
(brightness / contrast / extra noise / widened geometry), standing in for
the attacker's out-of-distribution proxy data.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import ProxyPool
from .errors import ConfigError

NUM_CLASSES = 3


@dataclass(frozen=True)
class ShiftRecipe:
    """Distribution shift applied to proxy samples."""

    brightness: float = 0.35
    contrast: float = 0.7
    noise_scale: float = 1.6
    geometry_jitter: int = 2  # widens the admissible shape-position range


def _render(rng: np.random.Generator, label: int, size: int, jitter: int) -> np.ndarray:
    img = np.zeros((size, size), dtype=np.float32)
    lo, hi = 2 - min(jitter, 2), size - 2 + min(jitter, 2)
    if label == 0:  # horizontal bar
        r = rng.integers(lo, hi - 3)
        t = rng.integers(2, 4)
        img[r : r + t, 1 : size - 1] = 1.0
    elif label == 1:  # vertical bar
        c = rng.integers(lo, hi - 3)
        t = rng.integers(2, 4)
        img[1 : size - 1, c : c + t] = 1.0
    else:  # disk
        cy, cx = rng.integers(5, size - 5, size=2)
        rad = rng.integers(3, 5) + (1 if jitter > 0 and rng.random() < 0.5 else 0)
        yy, xx = np.mgrid[0:size, 0:size]
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= rad**2] = 1.0
    return img


def generate_labeled(
    n: int,
    seed: int,
    image_size: int = 16,
    noise: float = 1.0,
    shift: ShiftRecipe | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Class-balanced (images, latent labels). Latent labels exist for every
    sample but the proxy pipeline discards them; only the victim's answers
    are used downstream."""
    if image_size < 12:
        raise ConfigError(f"image_size must be >= 12 to fit the shapes, got {image_size}")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, NUM_CLASSES, size=n).astype(np.int64)
    jitter = shift.geometry_jitter if shift else 0
    images = np.stack([_render(rng, int(y), image_size, jitter) for y in labels])
    if shift is not None:
        images = shift.contrast * images + shift.brightness
        sigma = noise * shift.noise_scale
    else:
        sigma = noise
    images = images + sigma * rng.standard_normal(images.shape).astype(np.float32)
    return images[:, None, :, :].astype(np.float32), labels


def make_proxy_pool(
    n: int,
    seed: int,
    image_size: int = 16,
    noise: float = 1.0,
    shift: ShiftRecipe | None = None,
) -> ProxyPool:
    shift = shift or ShiftRecipe()
    images, _ = generate_labeled(n, seed, image_size, noise, shift)
    provenance = f"synthetic-shapes-proxy(seed={seed},shift={asdict(shift)})"
    ids = tuple(f"px{i:06d}" for i in range(n))
    return ProxyPool(ids, images, provenance)
