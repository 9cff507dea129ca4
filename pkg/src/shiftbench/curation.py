"""Single-object crop curation from multi-object detection scenes.

The pipeline turns full annotated scenes into square single-main-object
cutout specifications ready to be rescaled to a fixed 256x256 frame:

1. per-object eligibility filters (occlusion policy, minimum pixel width),
2. a jittered-center square window proposal per eligible object,
3. a single-main-object check (other objects may occupy at most a fixed
   fraction of the main object's window-clipped area),
4. annotation transform into the output frame, and
5. per-class caps with uniform subsampling.

Everything here is pure geometry: pixel resampling of actual image files is
left to the CLI layer, so the pipeline is testable without images.

Randomness is drawn from per-object streams derived from
``(seed, image_id, object_index)``, which makes results independent of scene
order, object skips, and parallel execution.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, MutableMapping

import numpy as np

from .boxes import Box, clip_area_in_window
from .errors import ShiftBenchError, ValidationError
from .records import _check_number_list, _get_int, _get_str, _iter_lines, _load_object

__all__ = [
    "CropInfeasibleError",
    "CropSpec",
    "CurationConfig",
    "CurationResult",
    "SceneAnnotation",
    "SceneObject",
    "apply_class_caps",
    "curate_scene",
    "curate_scenes",
    "min_size_filter",
    "parse_crop_specs",
    "parse_scenes",
    "propose_crop",
    "serialize_crop_specs",
    "serialize_scenes",
    "single_main_object_check",
    "transform_annotation",
]

DEFAULT_CLASS_NAMES = (
    "traffic_sign",
    "traffic_light",
    "car",
    "truck",
    "pedestrian",
    "bus",
    "bike",
)

# Stream-label constant separating the cap-subsampling RNG family from the
# per-object proposal streams (which use a 64-bit image_id digest here).
_CAPS_STREAM_TAG = 104729

_SQUARE_TOL = 1e-6


class CropInfeasibleError(ShiftBenchError):
    """No square window inside the image can contain the object."""


@dataclass(frozen=True, slots=True)
class SceneObject:
    """One annotated object in an original, uncropped scene."""

    class_id: int
    box: Box
    occluded: bool = False
    truncated: bool = False


@dataclass(frozen=True, slots=True)
class SceneAnnotation:
    """An original image's dimensions plus its annotated objects."""

    image_id: str
    width: float
    height: float
    objects: tuple[SceneObject, ...]


@dataclass(frozen=True, slots=True)
class CropSpec:
    """A square cutout window plus the transformed main-object annotation."""

    image_id: str
    main_object_index: int
    window: Box
    scale: float
    out_box: Box
    class_id: int


@dataclass(frozen=True, slots=True)
class CurationResult:
    """Accepted specs plus per-reason skip counts over a scene collection."""

    specs: tuple[CropSpec, ...]
    skip_counts: Mapping[str, int]
    n_scenes: int


@dataclass(frozen=True, slots=True)
class CurationConfig:
    """Tunable parameters of the curation pipeline.

    ``class_caps`` maps split name to the per-class cap applied by
    :func:`apply_class_caps`; ``split`` selects the active entry.
    ``occlusion_exempt_classes`` contains class *names* (resolved through
    ``class_names``) whose occluded or truncated instances are kept even
    when ``drop_occluded_truncated`` is set. ``class_remap`` optionally maps
    source class ids to merged ids on emitted specs (dataset-specific class
    merging is configuration, not logic).
    """

    target_size: float = 256.0
    min_object_width: float = 30.0
    overlap_ratio_max: float = 1 / 3
    max_expansion: float = 3.0
    class_caps: Mapping[str, int] = field(
        default_factory=lambda: {"train": 5000, "val": 1000, "test": 1000}
    )
    split: str = "train"
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES
    occlusion_exempt_classes: frozenset[str] = frozenset({"pedestrian", "bike"})
    drop_occluded_truncated: bool = True
    class_remap: tuple[tuple[int, int], ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.target_size > 0:
            raise ValidationError(
                f"target_size must be > 0, got {self.target_size}", field="target_size"
            )
        if self.min_object_width < 0:
            raise ValidationError(
                f"min_object_width must be >= 0, got {self.min_object_width}",
                field="min_object_width",
            )
        if not 0.0 < self.overlap_ratio_max < 1.0:
            raise ValidationError(
                f"overlap_ratio_max must lie strictly between 0 and 1, got "
                f"{self.overlap_ratio_max}",
                field="overlap_ratio_max",
            )
        if self.max_expansion < 1.0:
            raise ValidationError(
                f"max_expansion must be >= 1, got {self.max_expansion}",
                field="max_expansion",
            )
        for split_name, cap in self.class_caps.items():
            if cap < 0:
                raise ValidationError(
                    f"class cap for split '{split_name}' must be >= 0, got {cap}",
                    field="class_caps",
                )
        if self.split not in self.class_caps:
            raise ValidationError(
                f"split '{self.split}' has no entry in class_caps", field="split"
            )
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}", field="seed")

    def cap_for_split(self) -> int:
        return int(self.class_caps[self.split])

    def is_exempt(self, class_id: int) -> bool:
        if 0 <= class_id < len(self.class_names):
            return self.class_names[class_id] in self.occlusion_exempt_classes
        return False

    def remapped_class(self, class_id: int) -> int:
        return dict(self.class_remap).get(class_id, class_id)


def _object_rng(seed: int, image_id: str, object_index: int) -> np.random.Generator:
    """Independent per-object stream; stable under scene/object reordering."""
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "big"), object_index])


def min_size_filter(member: SceneObject, cfg: CurationConfig) -> bool:
    """Keep an object iff its original-pixel width meets the minimum.

    Strictly-smaller objects are removed; the boundary width is kept.
    """
    return member.box.width >= cfg.min_object_width


def _passes_occlusion_policy(member: SceneObject, cfg: CurationConfig) -> bool:
    if not cfg.drop_occluded_truncated:
        return True
    if not (member.occluded or member.truncated):
        return True
    return cfg.is_exempt(member.class_id)


def propose_crop(
    scene: SceneAnnotation,
    object_index: int,
    cfg: CurationConfig,
    rng,
) -> CropSpec:
    """Propose a jittered square window around one object.

    The object's center is shifted by ``r * (cos theta, sin theta)`` with
    ``theta ~ U[0, 2*pi)`` and ``r ~ U[0, r_max]``, where ``r_max`` caps the
    jitter at half the object's tight-square side and at the slack left by
    the short image side, so a feasible window always exists. The window
    side is drawn uniformly between the smallest square containing the
    object centered at the shifted point and ``max_expansion`` times that,
    clipped to the short image side; the window is then translated
    minimally to lie inside the image (which cannot evict the object).

    Draw order from ``rng``: theta, r, side.

    Raises :class:`CropInfeasibleError` when the object's tight square
    exceeds the short image side.
    """
    member = scene.objects[object_index]
    x1, y1, x2, y2 = member.box
    short = min(scene.width, scene.height)
    s_tight = max(member.box.width, member.box.height)
    if s_tight > short:
        raise CropInfeasibleError(
            f"object {object_index} in scene '{scene.image_id}' has tight square "
            f"{s_tight} exceeding the short image side {short}"
        )
    r_max = min(s_tight / 2.0, (short - s_tight) / 2.0)

    theta = float(rng.uniform(0.0, 2.0 * math.pi))
    r = float(rng.uniform(0.0, r_max))
    cx, cy = member.box.center
    jx = cx + r * math.cos(theta)
    jy = cy + r * math.sin(theta)

    s_min = 2.0 * max(jx - x1, x2 - jx, jy - y1, y2 - jy)
    s_min = min(s_min, short)  # guard the <= short bound against rounding
    s_hi = min(cfg.max_expansion * s_min, short)
    side = float(rng.uniform(s_min, s_hi))

    ox = min(max(jx - side / 2.0, 0.0), scene.width - side)
    oy = min(max(jy - side / 2.0, 0.0), scene.height - side)
    window = Box(ox, oy, ox + side, oy + side)
    scale = cfg.target_size / side

    spec = CropSpec(
        image_id=scene.image_id,
        main_object_index=object_index,
        window=window,
        scale=scale,
        out_box=Box(0.0, 0.0, cfg.target_size, cfg.target_size),  # placeholder
        class_id=cfg.remapped_class(member.class_id),
    )
    raw = transform_annotation(spec, member.box)
    clamped = Box(
        min(max(raw.x1, 0.0), cfg.target_size),
        min(max(raw.y1, 0.0), cfg.target_size),
        min(max(raw.x2, 0.0), cfg.target_size),
        min(max(raw.y2, 0.0), cfg.target_size),
    )
    return CropSpec(
        image_id=spec.image_id,
        main_object_index=spec.main_object_index,
        window=spec.window,
        scale=spec.scale,
        out_box=clamped,
        class_id=spec.class_id,
    )


def transform_annotation(spec: CropSpec, box: Box) -> Box:
    """Map an original-pixel box into the output frame of a crop."""
    return Box(
        (box.x1 - spec.window.x1) * spec.scale,
        (box.y1 - spec.window.y1) * spec.scale,
        (box.x2 - spec.window.x1) * spec.scale,
        (box.y2 - spec.window.y1) * spec.scale,
    )


def single_main_object_check(
    spec: CropSpec, scene: SceneAnnotation, cfg: CurationConfig
) -> bool:
    """True iff every other object's window-clipped area stays within the
    allowed fraction of the main object's window-clipped area.

    The comparison is on the area *ratio* (inclusive at equality), so an
    other-object area of exactly one third passes under the default config.
    Objects entirely outside the window contribute zero area and can never
    disqualify a crop.
    """
    main = scene.objects[spec.main_object_index]
    main_area = clip_area_in_window(main.box, spec.window)
    if main_area <= 0.0:
        return False
    for index, other in enumerate(scene.objects):
        if index == spec.main_object_index:
            continue
        other_area = clip_area_in_window(other.box, spec.window)
        if other_area / main_area > cfg.overlap_ratio_max:
            return False
    return True


def _bump(counts: MutableMapping[str, int], reason: str) -> None:
    counts[reason] = counts.get(reason, 0) + 1


def curate_scene(
    scene: SceneAnnotation,
    cfg: CurationConfig,
    rng: np.random.Generator | None = None,
    *,
    skip_counts: MutableMapping[str, int] | None = None,
) -> list[CropSpec]:
    """Attempt one crop per eligible object; return the accepted specs.

    Each skipped object increments exactly one reason in ``skip_counts``
    (when provided): ``occluded_or_truncated``, ``below_min_width``,
    ``infeasible_window``, or ``overlap_exceeded``.

    When ``rng`` is omitted, per-object streams are derived from
    ``(cfg.seed, scene.image_id, object_index)``; an explicit generator is
    split into one child stream per object. Either way, skipped objects
    consume no randomness, so the eligibility filters commute with the
    proposal step.
    """
    counts: MutableMapping[str, int] = skip_counts if skip_counts is not None else {}
    streams = rng.spawn(len(scene.objects)) if rng is not None else None
    specs: list[CropSpec] = []
    for index, member in enumerate(scene.objects):
        if not _passes_occlusion_policy(member, cfg):
            _bump(counts, "occluded_or_truncated")
            continue
        if not min_size_filter(member, cfg):
            _bump(counts, "below_min_width")
            continue
        stream = streams[index] if streams is not None else _object_rng(
            cfg.seed, scene.image_id, index
        )
        try:
            spec = propose_crop(scene, index, cfg, stream)
        except CropInfeasibleError:
            _bump(counts, "infeasible_window")
            continue
        if not single_main_object_check(spec, scene, cfg):
            _bump(counts, "overlap_exceeded")
            continue
        specs.append(spec)
    return specs


def curate_scenes(
    scenes: Iterable[SceneAnnotation], cfg: CurationConfig
) -> CurationResult:
    """Curate a scene collection; scene order never affects the output."""
    ordered = sorted(scenes, key=lambda s: s.image_id)
    seen: set[str] = set()
    for scene in ordered:
        if scene.image_id in seen:
            raise ValidationError(
                f"duplicate scene image_id '{scene.image_id}'", field="image_id"
            )
        seen.add(scene.image_id)
    counts: dict[str, int] = {}
    specs: list[CropSpec] = []
    for scene in ordered:
        specs.extend(curate_scene(scene, cfg, skip_counts=counts))
    return CurationResult(specs=tuple(specs), skip_counts=counts, n_scenes=len(ordered))


def apply_class_caps(
    specs: Iterable[CropSpec],
    cfg: CurationConfig,
    rng: np.random.Generator | None = None,
) -> list[CropSpec]:
    """Uniformly subsample each class down to the active split's cap.

    Input order is irrelevant: specs are canonically sorted by
    ``(image_id, main_object_index)`` before per-class subsampling, and each
    class draws from its own ``(seed, class_id)``-derived stream, so adding
    or reordering one class never perturbs another.
    """
    cap = cfg.cap_for_split()
    ordered = sorted(specs, key=lambda s: (s.image_id, s.main_object_index))
    by_class: dict[int, list[int]] = {}
    for position, spec in enumerate(ordered):
        by_class.setdefault(spec.class_id, []).append(position)
    keep: set[int] = set()
    for class_id in sorted(by_class):
        positions = by_class[class_id]
        if len(positions) <= cap:
            keep.update(positions)
            continue
        stream = (
            rng
            if rng is not None
            else np.random.default_rng(
                [cfg.seed, _CAPS_STREAM_TAG, class_id % 2**32]
            )
        )
        chosen = stream.choice(len(positions), size=cap, replace=False)
        keep.update(positions[int(i)] for i in chosen)
    return [spec for position, spec in enumerate(ordered) if position in keep]


# ---------------------------------------------------------------------------
# wire formats


def parse_scenes(stream: bytes | IO[bytes] | Iterable[bytes]) -> list[SceneAnnotation]:
    """Parse a scene-annotation JSONL stream.

    Keys: ``image_id``, ``width``, ``height``, ``objects`` (array of
    ``{class_id, box, occluded?, truncated?}`` with corner-point boxes in
    original pixels). Raises :class:`ValidationError` with the 1-based line
    number on the first malformed record.
    """
    scenes: list[SceneAnnotation] = []
    seen: set[str] = set()
    for lineno, raw in _iter_lines(stream):
        record = _load_object(raw, lineno)
        image_id = _get_str(record, "image_id", lineno)
        if image_id in seen:
            raise ValidationError(
                f"duplicate scene image_id '{image_id}'", line=lineno, field="image_id"
            )
        seen.add(image_id)
        width = _scene_dimension(record, "width", lineno)
        height = _scene_dimension(record, "height", lineno)
        raw_objects = record.get("objects")
        if not isinstance(raw_objects, list):
            raise ValidationError(
                "'objects' must be an array", line=lineno, field="objects"
            )
        members: list[SceneObject] = []
        for index, entry in enumerate(raw_objects):
            if not isinstance(entry, dict):
                raise ValidationError(
                    f"object {index} must be an object", line=lineno, field="objects"
                )
            class_id = _get_int(entry, "class_id", lineno)
            if class_id < -1:
                raise ValidationError(
                    f"object {index}: class_id must be >= -1, got {class_id}",
                    line=lineno,
                    field="class_id",
                )
            coords = _check_number_list(entry.get("box"), "box", lineno, 4)
            x1, y1, x2, y2 = coords
            if not (x1 < x2 and y1 < y2):
                raise ValidationError(
                    f"object {index}: box must satisfy x1 < x2 and y1 < y2",
                    line=lineno,
                    field="box",
                )
            if x1 < 0 or y1 < 0 or x2 > width or y2 > height:
                raise ValidationError(
                    f"object {index}: box outside image bounds "
                    f"[0,{width}]x[0,{height}]",
                    line=lineno,
                    field="box",
                )
            for flag in ("occluded", "truncated"):
                if flag in entry and not isinstance(entry[flag], bool):
                    raise ValidationError(
                        f"object {index}: '{flag}' must be a boolean",
                        line=lineno,
                        field=flag,
                    )
            members.append(
                SceneObject(
                    class_id=class_id,
                    box=Box(x1, y1, x2, y2),
                    occluded=bool(entry.get("occluded", False)),
                    truncated=bool(entry.get("truncated", False)),
                )
            )
        scenes.append(
            SceneAnnotation(
                image_id=image_id, width=width, height=height, objects=tuple(members)
            )
        )
    return scenes


def _scene_dimension(record: dict, key: str, lineno: int) -> float:
    try:
        value = record[key]
    except KeyError:
        raise ValidationError(f"missing required key '{key}'", line=lineno, field=key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"'{key}' must be a number", line=lineno, field=key)
    if not value > 0:
        raise ValidationError(f"'{key}' must be > 0, got {value}", line=lineno, field=key)
    return float(value)


def serialize_scenes(scenes: Iterable[SceneAnnotation]) -> bytes:
    """Serialize scenes to JSONL; inverse of :func:`parse_scenes`."""
    lines = []
    for scene in scenes:
        lines.append(
            json.dumps(
                {
                    "image_id": scene.image_id,
                    "width": scene.width,
                    "height": scene.height,
                    "objects": [
                        {
                            "class_id": member.class_id,
                            "box": list(member.box),
                            "occluded": member.occluded,
                            "truncated": member.truncated,
                        }
                        for member in scene.objects
                    ],
                },
                separators=(",", ":"),
            )
        )
    return ("\n".join(lines) + "\n").encode() if lines else b""


def parse_crop_specs(stream: bytes | IO[bytes] | Iterable[bytes]) -> list[CropSpec]:
    """Parse a CropSpec JSONL stream produced by :func:`serialize_crop_specs`."""
    specs: list[CropSpec] = []
    for lineno, raw in _iter_lines(stream):
        record = _load_object(raw, lineno)
        image_id = _get_str(record, "image_id", lineno)
        index = _get_int(record, "main_object_index", lineno)
        if index < 0:
            raise ValidationError(
                f"main_object_index must be >= 0, got {index}",
                line=lineno,
                field="main_object_index",
            )
        wx1, wy1, wx2, wy2 = _check_number_list(record.get("window"), "window", lineno, 4)
        if not (wx1 < wx2 and wy1 < wy2):
            raise ValidationError(
                "window must satisfy x1 < x2 and y1 < y2", line=lineno, field="window"
            )
        side_x = wx2 - wx1
        side_y = wy2 - wy1
        if abs(side_x - side_y) > _SQUARE_TOL * max(side_x, side_y):
            raise ValidationError(
                f"window must be square, got {side_x} x {side_y}",
                line=lineno,
                field="window",
            )
        scale_raw = record.get("scale")
        if isinstance(scale_raw, bool) or not isinstance(scale_raw, (int, float)):
            raise ValidationError("'scale' must be a number", line=lineno, field="scale")
        if not scale_raw > 0:
            raise ValidationError(
                f"'scale' must be > 0, got {scale_raw}", line=lineno, field="scale"
            )
        ox1, oy1, ox2, oy2 = _check_number_list(record.get("out_box"), "out_box", lineno, 4)
        if not (ox1 < ox2 and oy1 < oy2):
            raise ValidationError(
                "out_box must satisfy x1 < x2 and y1 < y2", line=lineno, field="out_box"
            )
        class_id = _get_int(record, "class_id", lineno)
        specs.append(
            CropSpec(
                image_id=image_id,
                main_object_index=index,
                window=Box(wx1, wy1, wx2, wy2),
                scale=float(scale_raw),
                out_box=Box(ox1, oy1, ox2, oy2),
                class_id=class_id,
            )
        )
    return specs


def serialize_crop_specs(specs: Iterable[CropSpec]) -> bytes:
    """Serialize CropSpecs to JSONL; inverse of :func:`parse_crop_specs`."""
    lines = []
    for spec in specs:
        lines.append(
            json.dumps(
                {
                    "image_id": spec.image_id,
                    "main_object_index": spec.main_object_index,
                    "window": list(spec.window),
                    "scale": spec.scale,
                    "out_box": list(spec.out_box),
                    "class_id": spec.class_id,
                },
                separators=(",", ":"),
            )
        )
    return ("\n".join(lines) + "\n").encode() if lines else b""
