"""Image augmentation: global/local crops, jitter, blur, solarization.

Images are HWC float arrays in [0, 1]. Every transform draws from the
caller's RNG stream, so a per-sample stream gives deterministic replay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from harmony.config import AugmentRecipe


@dataclass
class CropSet:
    globals: list[np.ndarray]
    locals: list[np.ndarray]
    log: list[dict] = field(default_factory=list)


def _resize_nearest(image: np.ndarray, out_size: int) -> np.ndarray:
    h, w = image.shape[:2]
    rows = (np.arange(out_size) * h / out_size).astype(int).clip(0, h - 1)
    cols = (np.arange(out_size) * w / out_size).astype(int).clip(0, w - 1)
    return image[rows][:, cols]


def random_resized_crop(image: np.ndarray, scale_range: tuple[float, float],
                        out_size: int, rng: np.random.Generator) -> np.ndarray:
    h, w = image.shape[:2]
    scale = rng.uniform(*scale_range)
    side = max(1, int(round(np.sqrt(scale * h * w))))
    side = min(side, h, w)
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    crop = image[top:top + side, left:left + side]
    if side == out_size:
        return crop.copy()
    return _resize_nearest(crop, out_size)


def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def color_jitter(image: np.ndarray, rng: np.random.Generator,
                 strengths: tuple[float, float, float, float]) -> np.ndarray:
    b, c, s, hue = strengths
    out = image
    # brightness / contrast / saturation as multiplicative perturbations
    out = out * rng.uniform(max(0.0, 1 - b), 1 + b)
    mean = out.mean()
    out = (out - mean) * rng.uniform(max(0.0, 1 - c), 1 + c) + mean
    gray = out.mean(axis=2, keepdims=True)
    out = gray + (out - gray) * rng.uniform(max(0.0, 1 - s), 1 + s)
    if hue > 0:
        # small rotation about the gray axis approximates a hue shift
        theta = rng.uniform(-hue, hue) * 2 * np.pi
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        one_third = 1.0 / 3.0
        sqrt_third = np.sqrt(one_third)
        m = (cos_t * np.eye(3)
             + (1 - cos_t) * np.full((3, 3), one_third)
             + sin_t * sqrt_third * np.array([[0, -1, 1], [1, 0, -1], [-1, 1, 0]]))
        out = out @ m.T
    return np.clip(out, 0.0, 1.0)


def grayscale(image: np.ndarray) -> np.ndarray:
    gray = image.mean(axis=2, keepdims=True)
    return np.repeat(gray, 3, axis=2)


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    return gaussian_filter(image, sigma=(sigma, sigma, 0.0))


def solarize(image: np.ndarray, threshold: int, max_value: int = 255) -> np.ndarray:
    """Pixels at or above the threshold map to (max - value)."""
    t = threshold / max_value
    return np.where(image >= t, 1.0 - image, image)


def _augment_one(image: np.ndarray, recipe: AugmentRecipe, rng: np.random.Generator,
                 out_size: int, scale: tuple[float, float], blur_p: float,
                 solarize_p: float, log: dict) -> np.ndarray:
    crop = random_resized_crop(image, scale, out_size, rng)
    if recipe.standard_recipe:
        if rng.random() < recipe.flip_p:
            crop = hflip(crop)
            log["flip"] = True
        return crop
    if rng.random() < recipe.flip_p:
        crop = hflip(crop)
        log["flip"] = True
    if rng.random() < recipe.jitter_p:
        crop = color_jitter(crop, rng, recipe.jitter_strengths)
        log["jitter"] = True
    if rng.random() < recipe.grayscale_p:
        crop = grayscale(crop)
        log["grayscale"] = True
    if rng.random() < blur_p:
        crop = gaussian_blur(crop, sigma=float(rng.uniform(0.1, 1.0)))
        log["blur"] = True
    if rng.random() < solarize_p:
        crop = solarize(crop, recipe.solarize_threshold)
        log["solarize"] = True
    return np.clip(crop, 0.0, 1.0)


def make_crops(image: np.ndarray, recipe: AugmentRecipe, rng: np.random.Generator,
               global_size: int, local_size: int, n_locals: int = 8) -> CropSet:
    """Two global crops plus n local crops with a replayable augmentation log."""
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError("image smaller than minimum crop")
    scale = recipe.standard_scale if recipe.standard_recipe else recipe.global_scale
    logs: list[dict] = []
    crops: list[np.ndarray] = []
    # first global crop blurred by default, second with low probability + solarize
    for i, (blur_p, sol_p) in enumerate(
        ((recipe.blur_p_global1, 0.0), (recipe.blur_p_global2, recipe.solarize_p))
    ):
        log: dict = {"view": f"global{i + 1}"}
        crops.append(_augment_one(image, recipe, rng, global_size, scale, blur_p, sol_p, log))
        logs.append(log)
    locals_: list[np.ndarray] = []
    for i in range(n_locals):
        log = {"view": f"local{i + 1}"}
        locals_.append(_augment_one(image, recipe, rng, local_size, recipe.local_scale,
                                    recipe.blur_p_local, 0.0, log))
        logs.append(log)
    return CropSet(globals=crops, locals=locals_, log=logs)


def mae_view_policy(crops: CropSet, policy: str) -> list[np.ndarray]:
    """Which views feed pixel reconstruction: both globals, or just the first."""
    if policy == "both_globals":
        return list(crops.globals)
    if policy == "standard":
        return [crops.globals[0]]
    raise ValueError(f"unknown reconstruction view policy {policy!r}")
