"""Paired view generation.

One geometric transform (crop box + flip flag) is sampled per image and
applied to BOTH views so that token n looks at the same region in the
teacher and student networks; photometric jitter is applied to the student
view only. Images are (3, H, W) float64 in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentConfig:
    scale_min: float = 0.2
    scale_max: float = 1.0
    flip_prob: float = 0.5
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.scale_min <= self.scale_max <= 1.0):
            raise ValueError("need 0 < scale_min <= scale_max <= 1")
        if not (0.0 <= self.flip_prob <= 1.0):
            raise ValueError("flip_prob must be in [0, 1]")
        if min(self.brightness, self.contrast, self.saturation) < 0:
            raise ValueError("jitter strengths must be >= 0")


@dataclass(frozen=True)
class TransformRecord:
    crop_box: tuple[int, int, int, int]  # top, left, height, width
    flip: bool
    jitter_order: tuple[str, ...]  # student-side; teacher jitter is identity
    jitter_factors: tuple[float, ...]


@dataclass(frozen=True)
class ViewPair:
    teacher_view: np.ndarray
    student_view: np.ndarray
    record: TransformRecord


def _check_image(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {img.shape}")
    if img.shape[1] < 2 or img.shape[2] < 2:
        raise ValueError("degenerate source image (smaller than 2x2)")
    return img


def sample_crop_box(
    height: int,
    width: int,
    rng: np.random.Generator,
    scale_range: tuple[float, float],
    ratio_range: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0),
) -> tuple[int, int, int, int]:
    """Sample (top, left, h, w): area fraction from scale_range, aspect
    log-uniform from ratio_range, 10 attempts then a clamped center fallback."""
    area = height * width
    log_lo, log_hi = math.log(ratio_range[0]), math.log(ratio_range[1])
    for _ in range(10):
        target_area = area * rng.uniform(scale_range[0], scale_range[1])
        aspect = math.exp(rng.uniform(log_lo, log_hi))
        w = int(round(math.sqrt(target_area * aspect)))
        h = int(round(math.sqrt(target_area / aspect)))
        if 0 < w <= width and 0 < h <= height:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return (top, left, h, w)
    # fallback: largest crop at the nearest in-range aspect, centered
    in_ratio = width / height
    if in_ratio < ratio_range[0]:
        w = width
        h = min(height, int(round(w / ratio_range[0])))
    elif in_ratio > ratio_range[1]:
        h = height
        w = min(width, int(round(h * ratio_range[1])))
    else:
        w, h = width, height
    return ((height - h) // 2, (width - w) // 2, h, w)


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample without corner alignment.

    Source coordinate for output index i is (i + 0.5) * (src / dst) - 0.5,
    clamped to the valid range; each output is the area-weighted blend of
    the four neighbouring pixels.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[-2], img.shape[-1]
    if (out_h, out_w) == (h, w):
        return img.copy()

    def axis_weights(n_src: int, n_dst: int):
        src = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
        src = np.clip(src, 0.0, n_src - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_src - 1)
        frac = src - lo
        return lo, hi, frac

    y0, y1, fy = axis_weights(h, out_h)
    x0, x1, fx = axis_weights(w, out_w)
    fy = fy[:, None]
    top = img[..., y0, :][..., x0] * (1 - fx) + img[..., y0, :][..., x1] * fx
    bot = img[..., y1, :][..., x0] * (1 - fx) + img[..., y1, :][..., x1] * fx
    return top * (1 - fy) + bot * fy


def resized_crop(image: np.ndarray, box: tuple[int, int, int, int], out_size: int) -> np.ndarray:
    top, left, h, w = box
    img = _check_image(image)
    return bilinear_resize(img[:, top : top + h, left : left + w], out_size, out_size)


def random_resized_crop(
    image: np.ndarray,
    rng: np.random.Generator,
    scale_range: tuple[float, float],
    out_size: int,
    ratio_range: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0),
) -> np.ndarray:
    img = _check_image(image)
    box = sample_crop_box(img.shape[1], img.shape[2], rng, scale_range, ratio_range)
    return resized_crop(img, box, out_size)


def horizontal_flip(image: np.ndarray, flag: bool) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    return np.ascontiguousarray(img[..., ::-1]) if flag else img.copy()


_LUMA = np.array([0.299, 0.587, 0.114])


def apply_jitter(image: np.ndarray, order: tuple[str, ...], factors: tuple[float, ...]) -> np.ndarray:
    """Apply named jitter operations in order, clamping to [0, 1] after each."""
    img = np.asarray(image, dtype=np.float64).copy()
    for op, f in zip(order, factors):
        if f == 1.0:  # exact no-op keeps strengths-0 views bit-identical
            continue
        if op == "brightness":
            img = img * f
        elif op == "contrast":
            mean = float((_LUMA @ img.reshape(3, -1)).mean())
            img = (img - mean) * f + mean
        elif op == "saturation":
            luma = np.tensordot(_LUMA, img, axes=(0, 0))[None]
            img = (img - luma) * f + luma
        else:
            raise ValueError(f"unknown jitter op {op!r}")
        img = np.clip(img, 0.0, 1.0)
    return img


_JITTER_OPS = ("brightness", "contrast", "saturation")


def sample_jitter(
    rng: np.random.Generator, strengths: tuple[float, float, float]
) -> tuple[tuple[str, ...], tuple[float, ...]]:
    order_idx = rng.permutation(3)
    by_op = {op: rng.uniform(1.0 - s, 1.0 + s) for op, s in zip(_JITTER_OPS, strengths)}
    order = tuple(_JITTER_OPS[i] for i in order_idx)
    return order, tuple(float(by_op[op]) for op in order)


def color_jitter(
    image: np.ndarray,
    rng: np.random.Generator,
    strengths: tuple[float, float, float],
) -> np.ndarray:
    img = _check_image(image)
    order, factors = sample_jitter(rng, strengths)
    return apply_jitter(img, order, factors)


def make_views(image: np.ndarray, rng: np.random.Generator, config: AugmentConfig) -> ViewPair:
    """Shared crop + flip for both views; jitter on the student view only."""
    img = _check_image(image)
    out_size = img.shape[1]
    box = sample_crop_box(
        img.shape[1], img.shape[2], rng, (config.scale_min, config.scale_max)
    )
    flip = bool(rng.random() < config.flip_prob)
    order, factors = sample_jitter(
        rng, (config.brightness, config.contrast, config.saturation)
    )
    shared = horizontal_flip(resized_crop(img, box, out_size), flip)
    return ViewPair(
        teacher_view=shared,
        student_view=apply_jitter(shared, order, factors),
        record=TransformRecord(box, flip, order, factors),
    )
