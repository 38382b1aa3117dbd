"""Stateless photometric augmentation profiles for the four pathways."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

from .rng import stream


@dataclass(frozen=True)
class AugmentProfile:
    contrast_lower: float = 1.0
    contrast_upper: float = 1.0
    brightness_max_delta: float = 0.0
    hue_max_delta: float = 0.0
    saturation_lower: float = 1.0
    saturation_upper: float = 1.0

    def __post_init__(self):
        if self.contrast_lower > self.contrast_upper or self.saturation_lower > self.saturation_upper:
            raise ValueError(f"lower bound exceeds upper bound in {self}")
        if self.brightness_max_delta < 0 or self.hue_max_delta < 0:
            raise ValueError(f"max deltas must be non-negative in {self}")


IDENTITY = AugmentProfile()

# teacher views are hard-augmented, student views soft; focal views get more contrast
PROFILES: dict[str, AugmentProfile] = {
    "teacher_global": AugmentProfile(2.0, 2.2, 0.8, 0.8, 2.0, 2.5),
    "teacher_focal": AugmentProfile(2.8, 3.0, 0.8, 0.8, 2.0, 2.5),
    "student_global": AugmentProfile(0.5, 1.0, 0.5, 0.5, 1.5, 2.0),
    "student_focal": AugmentProfile(1.0, 1.5, 0.5, 0.5, 1.5, 2.0),
}


def sample_factors(profile: AugmentProfile, rng: np.random.Generator) -> dict[str, float]:
    """Draw all four random factors, always in the same order."""
    return {
        "contrast": rng.uniform(profile.contrast_lower, profile.contrast_upper),
        "brightness": rng.uniform(-profile.brightness_max_delta, profile.brightness_max_delta),
        "hue": rng.uniform(-profile.hue_max_delta, profile.hue_max_delta),
        "saturation": rng.uniform(profile.saturation_lower, profile.saturation_upper),
    }


def augment(image: np.ndarray, profile: AugmentProfile, seed) -> np.ndarray:
    """Contrast about the mean, brightness shift, hue/saturation (RGB only), clip.

    ``image`` is ``(H, W)`` or ``(H, W, C)`` with values in [0, 1]. ``seed``
    is an int or a tuple path understood by :func:`gazefocal.rng.stream`.
    """
    path = seed if isinstance(seed, tuple) else (seed,)
    factors = sample_factors(profile, stream(*path, "augment"))
    img = np.asarray(image, dtype=np.float32)
    out = img
    # unit factors are skipped so a degenerate profile is exactly the identity
    if factors["contrast"] != 1.0:
        mean = img.mean(axis=(0, 1), keepdims=True)
        out = (img - mean) * np.float32(factors["contrast"]) + mean
    if factors["brightness"] != 0.0:
        out = out + np.float32(factors["brightness"])
    colour_change = factors["hue"] != 0.0 or factors["saturation"] != 1.0
    if out.ndim == 3 and out.shape[-1] == 3 and colour_change:
        hsv = rgb_to_hsv(np.clip(out, 0.0, 1.0))
        hsv[..., 0] = np.mod(hsv[..., 0] + factors["hue"], 1.0)
        hsv[..., 1] = np.clip(hsv[..., 1] * factors["saturation"], 0.0, 1.0)
        out = hsv_to_rgb(hsv)
    return np.clip(out, 0.0, 1.0).astype(np.float32)
