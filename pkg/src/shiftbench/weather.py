"""Deterministic parametric rain and fog corruption for 256x256 crops.

Both effects are pure pixel transforms: geometry is untouched, so bounding
box annotations remain valid verbatim. Two shipped intensity levels per
effect satisfy a monotone-severity ordering (heavy strictly exceeds light
in altered-pixel count for rain and in mean absolute shift for fog).

Rain renders anti-aliased bright streaks: per pixel, coverage is
``clip(thickness/2 + 0.5 - distance_to_segment, 0, 1)`` combined across
streaks by maximum, and the output is ``input + coverage * delta``. Pixels
with zero coverage are returned bit-exactly.

Fog alpha-blends toward a gray level with the blend weight modulated by a
smooth zero-mean noise field: ``out = (1 - a) * in + a * gray`` with
``a = alpha * (1 + strength * n)``; the field is max-normalized so the mean
of ``a`` equals the preset alpha.

Arithmetic runs in float64 and is written back with round-half-to-even,
saturating to [0, 255].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError

__all__ = [
    "AugmentationPreset",
    "FogParams",
    "RainParams",
    "apply_fog",
    "apply_rain",
    "get_preset",
]

FRAME_PIXELS = 256


@dataclass(frozen=True, slots=True)
class RainParams:
    """Streak field parameters; density counts streaks per 10^4 px^2."""

    density_per_10k_px: float
    length_px: float
    thickness_px: float
    angle_deg: float
    brightness_delta: float

    def __post_init__(self) -> None:
        if self.density_per_10k_px < 0:
            raise ValidationError(
                f"density must be >= 0, got {self.density_per_10k_px}", field="density"
            )
        if self.length_px <= 0 or self.thickness_px <= 0:
            raise ValidationError(
                "streak length and thickness must be > 0", field="length_px"
            )


@dataclass(frozen=True, slots=True)
class FogParams:
    """Alpha-blend parameters; noise_scale is the spatial period in pixels."""

    alpha: float
    gray: float
    noise_scale: float
    noise_strength: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(
                f"alpha must lie in [0, 1], got {self.alpha}", field="alpha"
            )
        if not 0.0 <= self.gray <= 255.0:
            raise ValidationError(
                f"gray must lie in [0, 255], got {self.gray}", field="gray"
            )
        if self.noise_strength < 0:
            raise ValidationError(
                f"noise_strength must be >= 0, got {self.noise_strength}",
                field="noise_strength",
            )


@dataclass(frozen=True, slots=True)
class AugmentationPreset:
    """A named (effect, level) pair carrying the matching parameter block."""

    effect: str
    level: int
    rain: RainParams | None = None
    fog: FogParams | None = None

    def __post_init__(self) -> None:
        if self.effect not in ("rain", "fog"):
            raise ValidationError(
                f"effect must be 'rain' or 'fog', got '{self.effect}'", field="effect"
            )
        if self.level not in (1, 2):
            raise ValidationError(
                f"level must be 1 or 2, got {self.level}", field="level"
            )
        if self.effect == "rain" and self.rain is None:
            raise ValidationError("rain preset requires rain params", field="rain")
        if self.effect == "fog" and self.fog is None:
            raise ValidationError("fog preset requires fog params", field="fog")


RAIN_LIGHT = AugmentationPreset(
    effect="rain",
    level=1,
    rain=RainParams(
        density_per_10k_px=6.0,
        length_px=18.0,
        thickness_px=1.2,
        angle_deg=15.0,
        brightness_delta=70.0,
    ),
)
RAIN_HEAVY = AugmentationPreset(
    effect="rain",
    level=2,
    rain=RainParams(
        density_per_10k_px=20.0,
        length_px=26.0,
        thickness_px=1.6,
        angle_deg=15.0,
        brightness_delta=90.0,
    ),
)
FOG_LIGHT = AugmentationPreset(
    effect="fog",
    level=1,
    fog=FogParams(alpha=0.35, gray=200.0, noise_scale=64.0, noise_strength=0.35),
)
FOG_HEAVY = AugmentationPreset(
    effect="fog",
    level=2,
    fog=FogParams(alpha=0.60, gray=210.0, noise_scale=64.0, noise_strength=0.35),
)

_PRESETS = {
    ("rain", 1): RAIN_LIGHT,
    ("rain", 2): RAIN_HEAVY,
    ("fog", 1): FOG_LIGHT,
    ("fog", 2): FOG_HEAVY,
}


def get_preset(effect: str, level: int) -> AugmentationPreset:
    """Look up a shipped preset by effect name and intensity level."""
    if effect not in ("rain", "fog"):
        raise ValidationError(
            f"effect must be 'rain' or 'fog', got '{effect}'", field="effect"
        )
    try:
        return _PRESETS[(effect, int(level))]
    except (KeyError, ValueError):
        raise ValidationError(f"level must be 1 or 2, got {level}", field="level")


def _check_image(image: np.ndarray) -> None:
    if not isinstance(image, np.ndarray) or image.shape != (
        FRAME_PIXELS,
        FRAME_PIXELS,
        3,
    ):
        shape = getattr(image, "shape", None)
        raise ValidationError(
            f"expected a 256x256x3 image, got shape {shape}", field="image"
        )
    if image.dtype != np.uint8:
        raise ValidationError(
            f"expected uint8 pixels, got dtype {image.dtype}", field="image"
        )


def _write_back(values: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(values, 0.0, 255.0)).astype(np.uint8)


def apply_rain(
    image: np.ndarray, preset: AugmentationPreset, rng: np.random.Generator
) -> np.ndarray:
    """Overlay anti-aliased rain streaks; untouched pixels are bit-exact."""
    _check_image(image)
    if preset.rain is None:
        raise ValidationError("preset carries no rain params", field="rain")
    params = preset.rain
    n_streaks = int(round(params.density_per_10k_px * FRAME_PIXELS * FRAME_PIXELS / 1e4))
    if n_streaks == 0:
        return image.copy()

    centers = rng.uniform(0.0, float(FRAME_PIXELS), size=(n_streaks, 2))
    angle = math.radians(params.angle_deg)
    direction = (math.sin(angle), math.cos(angle))  # tilted off vertical
    half = params.length_px / 2.0
    margin = params.thickness_px / 2.0 + 1.5

    coverage = np.zeros((FRAME_PIXELS, FRAME_PIXELS), dtype=np.float64)
    for cx, cy in centers:
        p0 = (cx - half * direction[0], cy - half * direction[1])
        p1 = (cx + half * direction[0], cy + half * direction[1])
        x_lo = max(0, int(math.floor(min(p0[0], p1[0]) - margin)))
        x_hi = min(FRAME_PIXELS - 1, int(math.ceil(max(p0[0], p1[0]) + margin)))
        y_lo = max(0, int(math.floor(min(p0[1], p1[1]) - margin)))
        y_hi = min(FRAME_PIXELS - 1, int(math.ceil(max(p0[1], p1[1]) + margin)))
        if x_lo > x_hi or y_lo > y_hi:
            continue
        ys, xs = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
        rel_x = xs - p0[0]
        rel_y = ys - p0[1]
        t = np.clip(rel_x * direction[0] + rel_y * direction[1], 0.0, params.length_px)
        dist = np.hypot(rel_x - t * direction[0], rel_y - t * direction[1])
        local = np.clip(params.thickness_px / 2.0 + 0.5 - dist, 0.0, 1.0)
        region = coverage[y_lo : y_hi + 1, x_lo : x_hi + 1]
        np.maximum(region, local, out=region)

    shifted = image.astype(np.float64) + coverage[:, :, None] * params.brightness_delta
    return _write_back(shifted)


def _noise_field(params: FogParams, rng: np.random.Generator) -> np.ndarray | None:
    if params.noise_scale <= 0 or params.noise_strength == 0:
        return None
    cells = max(2, int(math.ceil(FRAME_PIXELS / params.noise_scale)) + 1)
    coarse = rng.standard_normal((cells, cells))
    factor = FRAME_PIXELS / cells
    field = ndimage.zoom(coarse, factor, order=1)
    field = field[:FRAME_PIXELS, :FRAME_PIXELS]
    field -= field.mean()
    peak = float(np.max(np.abs(field)))
    if peak > 0.0:
        field /= peak
    return field


def apply_fog(
    image: np.ndarray, preset: AugmentationPreset, rng: np.random.Generator
) -> np.ndarray:
    """Blend toward a fog gray with smooth spatially varying opacity."""
    _check_image(image)
    if preset.fog is None:
        raise ValidationError("preset carries no fog params", field="fog")
    params = preset.fog
    field = _noise_field(params, rng)
    if field is None:
        a = np.full((FRAME_PIXELS, FRAME_PIXELS), params.alpha, dtype=np.float64)
    else:
        a = np.clip(params.alpha * (1.0 + params.noise_strength * field), 0.0, 1.0)
    a = a[:, :, None]
    blended = (1.0 - a) * image.astype(np.float64) + a * params.gray
    return _write_back(blended)
