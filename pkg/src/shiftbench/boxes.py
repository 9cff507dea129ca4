"""Axis-aligned bounding boxes and the three parametrizations used by detectors.

A box lives in pixel coordinates with the origin at the top-left corner and
is always stored internally in corner-point form ``(x1, y1, x2, y2)`` with
``x1 < x2`` and ``y1 < y2``. Networks, however, regress boxes in one of three
interchangeable parametrizations:

* ``CORNER_POINTS`` -- the corners themselves,
* ``CENTER_POINT`` -- ``(c_x, c_y, w, h)``,
* ``ANCHOR_OFFSETS`` -- offsets ``(t_x, t_y, t_h, t_w)`` relative to an
  anchor box, with ``w = exp(t_w) * w_a``, ``h = exp(t_h) * h_a``,
  ``c_x = t_x * w_a + c_xa`` and ``c_y = t_y * h_a + c_ya``.

``encode_box`` / ``decode_box`` convert between a :class:`Box` and a
:class:`BoxEncoding` and invert each other exactly up to floating-point
rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterator

from .errors import ValidationError

__all__ = [
    "Box",
    "BoxEncoding",
    "BoxKind",
    "box_mae",
    "clip_area_in_window",
    "decode_box",
    "encode_box",
    "iou",
]


class BoxKind(str, Enum):
    """The three bounding-box parametrizations."""

    CORNER_POINTS = "corner_points"
    CENTER_POINT = "center_point"
    ANCHOR_OFFSETS = "anchor_offsets"


@dataclass(frozen=True, slots=True)
class Box:
    """A non-degenerate axis-aligned box in corner-point form."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not self.x1 < self.x2:
            raise ValidationError(
                f"box requires x1 < x2, got x1={self.x1}, x2={self.x2}", field="x1"
            )
        if not self.y1 < self.y2:
            raise ValidationError(
                f"box requires y1 < y2, got y1={self.y1}, y2={self.y2}", field="y1"
            )

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def astuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def __iter__(self) -> Iterator[float]:
        return iter(self.astuple())


@dataclass(frozen=True, slots=True)
class BoxEncoding:
    """A box expressed in one of the three parametrizations.

    ``values`` is interpreted according to ``kind``:
    corner points ``(x1, y1, x2, y2)``, center point ``(c_x, c_y, w, h)``,
    or anchor offsets ``(t_x, t_y, t_h, t_w)``. Encodings produced by
    :func:`encode_box` always decode back to a valid box; hand-built
    ``CENTER_POINT`` encodings must keep ``w`` and ``h`` positive.
    """

    kind: BoxKind
    values: tuple[float, float, float, float]


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in ``[0, 1]``.

    Boxes that merely touch along an edge have zero intersection area and
    therefore IoU 0.
    """
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def box_mae(a: Box, b: Box) -> float:
    """Mean absolute difference of the four corner coordinates, in pixels."""
    return (
        abs(a.x1 - b.x1) + abs(a.y1 - b.y1) + abs(a.x2 - b.x2) + abs(a.y2 - b.y2)
    ) / 4.0


def clip_area_in_window(box: Box, window: Box) -> float:
    """Area of ``box`` after clipping it to ``window`` (0 if disjoint)."""
    iw = min(box.x2, window.x2) - max(box.x1, window.x1)
    ih = min(box.y2, window.y2) - max(box.y1, window.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def encode_box(box: Box, kind: BoxKind, anchor: Box | None = None) -> BoxEncoding:
    """Express ``box`` in the requested parametrization.

    ``anchor`` is required for ``ANCHOR_OFFSETS`` and ignored otherwise.
    """
    kind = BoxKind(kind)
    if kind is BoxKind.CORNER_POINTS:
        return BoxEncoding(kind, box.astuple())
    c_x, c_y = box.center
    if kind is BoxKind.CENTER_POINT:
        return BoxEncoding(kind, (c_x, c_y, box.width, box.height))
    if anchor is None:
        raise ValidationError("anchor box is required for ANCHOR_OFFSETS", field="anchor")
    c_xa, c_ya = anchor.center
    t_x = (c_x - c_xa) / anchor.width
    t_y = (c_y - c_ya) / anchor.height
    t_h = math.log(box.height / anchor.height)
    t_w = math.log(box.width / anchor.width)
    return BoxEncoding(kind, (t_x, t_y, t_h, t_w))


def decode_box(encoding: BoxEncoding, anchor: Box | None = None) -> Box:
    """Recover the corner-point :class:`Box` from an encoding.

    Inverse of :func:`encode_box`. ``anchor`` is required for
    ``ANCHOR_OFFSETS``. Raises :class:`ValidationError` if a
    ``CENTER_POINT`` encoding carries a non-positive width or height.
    """
    kind = BoxKind(encoding.kind)
    if kind is BoxKind.CORNER_POINTS:
        return Box(*encoding.values)
    if kind is BoxKind.CENTER_POINT:
        c_x, c_y, w, h = encoding.values
        if w <= 0.0 or h <= 0.0:
            raise ValidationError(
                f"center-point encoding requires w > 0 and h > 0, got w={w}, h={h}",
                field="w" if w <= 0.0 else "h",
            )
    else:
        if anchor is None:
            raise ValidationError("anchor box is required for ANCHOR_OFFSETS", field="anchor")
        t_x, t_y, t_h, t_w = encoding.values
        c_xa, c_ya = anchor.center
        w = math.exp(t_w) * anchor.width
        h = math.exp(t_h) * anchor.height
        c_x = t_x * anchor.width + c_xa
        c_y = t_y * anchor.height + c_ya
    return Box(c_x - w / 2.0, c_y - h / 2.0, c_x + w / 2.0, c_y + h / 2.0)
