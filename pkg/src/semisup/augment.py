"""Weak (flip-and-shift) and strong (random ops + cutout) views.

Payloads are either flat vectors of length D or images shaped (H, W, ch),
always in [0, 1].  Every draw comes from an explicit numpy Generator; use
:func:`sample_rng` to get a stream keyed by (seed, stream, step, sample, view)
so the output never depends on batch composition or ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import ndimage

STRONG_OPS = ("invert", "contrast", "brightness", "rotate", "shear", "solarize", "posterize")

# view tags for sample_rng
ORIGINAL, WEAK, STRONG = 0, 1, 2


@dataclass(frozen=True)
class Sample:
    id: int
    payload: np.ndarray
    label: int | None = None


@dataclass(frozen=True)
class AugmentPolicy:
    kind: str = "weak"
    ops: tuple[str, ...] = STRONG_OPS
    n_ops: int = 2
    magnitude: float = 10.0
    cutout: float = 0.5
    flip: bool = True
    shift: float = 0.125
    # strong only: run the weak flip-and-shift before the random ops
    pre_weak: bool = False
    # vector payloads
    noise_sigma: float = 0.05
    dropout: float = 0.3
    jitter: float = 0.3

    def __post_init__(self):
        if self.kind not in ("weak", "strong"):
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        unknown = set(self.ops) - set(STRONG_OPS)
        if unknown:
            raise ValueError(f"unknown strong ops: {sorted(unknown)}")
        if not 0.0 <= self.magnitude <= 10.0:
            raise ValueError("magnitude must lie in [0, 10]")
        if not 0.0 <= self.cutout < 1.0:
            raise ValueError("cutout fraction must lie in [0, 1)")


def sample_rng(seed: int, stream: int, step: int, sample_id: int, view: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, step, sample_id, view])


# ---------------------------------------------------------------------------
# image primitives
# ---------------------------------------------------------------------------


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1].copy()


def translate(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Integer shift with edge padding; positive dy/dx move content down/right."""
    H, W = img.shape[:2]
    py, px = abs(dy), abs(dx)
    pad = [(py, py), (px, px)] + [(0, 0)] * (img.ndim - 2)
    padded = np.pad(img, pad, mode="edge")
    return padded[py - dy : py - dy + H, px - dx : px - dx + W].copy()


def _invert(img, s, rng):
    return (1.0 - s) * img + s * (1.0 - img)


def _contrast(img, s, rng):
    factor = 1.0 + rng.choice([-1.0, 1.0]) * 0.9 * s
    m = img.mean()
    return m + (img - m) * factor


def _brightness(img, s, rng):
    return img + rng.choice([-1.0, 1.0]) * 0.5 * s


def _spatial(img, matrix):
    H, W = img.shape[:2]
    center = np.array([(H - 1) / 2.0, (W - 1) / 2.0])
    offset = center - matrix @ center
    out = np.empty_like(img)
    for ch in range(img.shape[2]):
        out[..., ch] = ndimage.affine_transform(img[..., ch], matrix, offset=offset, order=0, mode="nearest")
    return out


def _rotate(img, s, rng):
    theta = np.deg2rad(rng.choice([-1.0, 1.0]) * 30.0 * s)
    c, n = np.cos(theta), np.sin(theta)
    return _spatial(img, np.array([[c, -n], [n, c]]))


def _shear(img, s, rng):
    k = rng.choice([-1.0, 1.0]) * 0.3 * s
    if rng.random() < 0.5:
        return _spatial(img, np.array([[1.0, k], [0.0, 1.0]]))
    return _spatial(img, np.array([[1.0, 0.0], [k, 1.0]]))


def _solarize(img, s, rng):
    threshold = 1.0 - s
    return np.where(img > threshold, 1.0 - img, img)


def _posterize(img, s, rng):
    levels = 2.0 ** (8.0 - 6.0 * s)
    return np.floor(img * (levels - 1.0) + 0.5) / (levels - 1.0)


_OPS: dict[str, Callable] = {
    "invert": _invert,
    "contrast": _contrast,
    "brightness": _brightness,
    "rotate": _rotate,
    "shear": _shear,
    "solarize": _solarize,
    "posterize": _posterize,
}


def apply_op(name: str, img: np.ndarray, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Apply one strong op at ``strength`` in [0, 1]; strength 0 is the identity."""
    if strength <= 0.0:
        return img
    return _OPS[name](img, strength, rng)


def cutout(img: np.ndarray, fraction: float, rng: np.random.Generator, fill: float = 0.5) -> np.ndarray:
    """Paint a square of side floor(fraction * W), fully inside the image, with ``fill``."""
    H, W = img.shape[:2]
    side = int(np.floor(fraction * W))
    if side <= 0:
        return img
    side = min(side, H)
    top = int(rng.integers(0, H - side + 1))
    left = int(rng.integers(0, W - side + 1))
    out = img.copy()
    out[top : top + side, left : left + side] = fill
    return out


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------


def weak_payload(x: np.ndarray, rng: np.random.Generator, policy: AugmentPolicy = AugmentPolicy()) -> np.ndarray:
    if x.ndim == 1:
        return np.clip(x + rng.normal(0.0, policy.noise_sigma, size=x.shape), 0.0, 1.0)
    H, W = x.shape[:2]
    out = x
    if policy.flip and rng.random() < 0.5:
        out = hflip(out)
    my, mx = int(round(policy.shift * H)), int(round(policy.shift * W))
    dy = int(rng.integers(-my, my + 1))
    dx = int(rng.integers(-mx, mx + 1))
    if dy or dx:
        out = translate(out, dy, dx)
    return out


def strong_payload(x: np.ndarray, rng: np.random.Generator, policy: AugmentPolicy = AugmentPolicy(kind="strong")) -> np.ndarray:
    top = policy.magnitude / 10.0
    if x.ndim == 1:
        keep = rng.random(x.shape) >= policy.dropout * top
        jitter = rng.uniform(1.0 - policy.jitter * top, 1.0 + policy.jitter * top, size=x.shape)
        return np.clip(x * keep * jitter, 0.0, 1.0)
    out = weak_payload(x, rng, policy) if policy.pre_weak else x
    for _ in range(policy.n_ops):
        name = policy.ops[int(rng.integers(len(policy.ops)))]
        out = apply_op(name, out, float(rng.uniform(0.0, top)), rng)
    out = np.clip(out, 0.0, 1.0)
    return cutout(out, policy.cutout, rng)


def weak(s: Sample, rng: np.random.Generator, policy: AugmentPolicy = AugmentPolicy()) -> Sample:
    return replace(s, payload=weak_payload(s.payload, rng, policy))


def strong(s: Sample, rng: np.random.Generator, policy: AugmentPolicy = AugmentPolicy(kind="strong")) -> Sample:
    return replace(s, payload=strong_payload(s.payload, rng, policy))


@dataclass
class ViewMaker:
    """Builds flattened weak/strong view batches with per-sample RNG streams."""

    seed: int
    weak_policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    strong_policy: AugmentPolicy = field(default_factory=lambda: AugmentPolicy(kind="strong"))

    def views(self, payloads: np.ndarray, ids, view: int, stream: int = 0, step: int = 0) -> np.ndarray:
        out = np.empty((len(ids), int(np.prod(payloads.shape[1:]))))
        for row, (x, sid) in enumerate(zip(payloads, ids)):
            rng = sample_rng(self.seed, stream, step, int(sid), view)
            if view == WEAK:
                y = weak_payload(x, rng, self.weak_policy)
            elif view == STRONG:
                y = strong_payload(x, rng, self.strong_policy)
            else:
                y = x
            out[row] = y.reshape(-1)
        return out
