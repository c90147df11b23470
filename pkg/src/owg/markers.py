"""Visual prompt rendering: set-of-mark overlays, RoI crops, grasp rectangles
and the single-segment transforms used by the embedding ranker."""

from __future__ import annotations

import colorsys
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Tuple

import numpy as np
from PIL import Image, ImageDraw, ImageFilter
from scipy import ndimage

from . import font
from .errors import (
    DegenerateRectangle,
    DimensionMismatch,
    GraspOutsideCrop,
    PaletteExhausted,
    UnknownSegment,
)

Box = Tuple[int, int, int, int]

STROKE_COLOR = (255, 0, 0)
HIGHRES_LONG_SIDE = 1024


def default_palette(n=20):
    """``n`` colors at evenly spaced hues, full saturation and value."""
    out = []
    for i in range(n):
        r, g, b = colorsys.hsv_to_rgb(i / n, 1.0, 1.0)
        out.append((int(round(r * 255)), int(round(g * 255)), int(round(b * 255))))
    return tuple(out)


@dataclass(frozen=True)
class MarkerStyle:
    fill_alpha: float = 0.4
    overlay_ids: bool = True
    draw_boxes: bool = False
    upscale: int = 1
    label_px: int = 28
    palette: Tuple[Tuple[int, int, int], ...] = field(default_factory=default_palette)

    def __post_init__(self):
        if not 0.0 <= self.fill_alpha <= 1.0:
            raise ValueError("fill_alpha must lie in [0, 1]")
        if int(self.upscale) != self.upscale or self.upscale < 1:
            raise ValueError("upscale must be an integer >= 1")
        if self.label_px < 8:
            raise ValueError("label_px must be >= 8")
        pal = tuple(tuple(int(c) for c in col) for col in self.palette)
        if len(set(pal)) != len(pal):
            raise ValueError("palette colors must be pairwise distinct")
        object.__setattr__(self, "palette", pal)

    @classmethod
    def for_image(cls, shape, **overrides):
        """Default style; upscale makes the long side reach 1024 px."""
        long_side = max(shape[:2])
        up = max(1, math.ceil(HIGHRES_LONG_SIDE / long_side))
        return replace(cls(upscale=up), **overrides)

    def without(self, axis):
        """Style with one ablation axis toggled: ids, fill, highres or boxes (on)."""
        if axis == "ids":
            return replace(self, overlay_ids=False)
        if axis == "fill":
            return replace(self, fill_alpha=0.0)
        if axis == "highres":
            return replace(self, upscale=1)
        if axis == "boxes":
            return replace(self, draw_boxes=True)
        raise ValueError(f"unknown ablation axis {axis!r}")


@dataclass(frozen=True, eq=False)
class MarkedImage:
    raster: np.ndarray
    placements: Dict[int, Box]
    source_ids: List[int]

    def __post_init__(self):
        h, w = self.raster.shape[:2]
        if set(self.placements) != set(self.source_ids):
            raise ValueError("every source id needs exactly one placement")
        for box in self.placements.values():
            u0, v0, u1, v1 = box
            if not (0 <= u0 < u1 <= w and 0 <= v0 < v1 <= h):
                raise ValueError(f"placement {box} outside raster {w}x{h}")

    def placements_json(self):
        return json.dumps({str(k): list(v) for k, v in sorted(self.placements.items())})


@dataclass(frozen=True, eq=False)
class RoiCrop:
    raster: np.ndarray
    offset: Tuple[int, int]
    segment_id: int

    @property
    def size(self):
        return self.raster.shape[1], self.raster.shape[0]


class VisualTransformKind(str, Enum):
    RECTANGLE = "rectangle"
    ELLIPSE = "ellipse"
    CONTOUR = "contour"
    BLUR_REVERSE = "blur_reverse"
    GRAY_REVERSE = "gray_reverse"
    WHITE_BACKGROUND = "white_background"
    CROP = "crop"


BOUNDARY_KINDS = (
    VisualTransformKind.RECTANGLE,
    VisualTransformKind.ELLIPSE,
    VisualTransformKind.CONTOUR,
)


def _upscale(a, s):
    if s == 1:
        return np.array(a, copy=True)
    return np.repeat(np.repeat(a, s, axis=0), s, axis=1)


def _stroke_rect(raster, box, color, width):
    u0, v0, u1, v1 = box
    for t in range(width):
        if u1 - u0 - 2 * t <= 0 or v1 - v0 - 2 * t <= 0:
            break
        raster[v0 + t, u0 + t : u1 - t] = color
        raster[v1 - 1 - t, u0 + t : u1 - t] = color
        raster[v0 + t : v1 - t, u0 + t] = color
        raster[v0 + t : v1 - t, u1 - 1 - t] = color


def _label_size(text, style):
    scale = font.scale_for(style.label_px)
    tw, th = font.text_size(text, scale)
    return tw + 2 * scale, th + 2 * scale, scale


def _draw_label(raster, box, text, color, scale):
    u0, v0, u1, v1 = box
    raster[v0:v1, u0:u1] = 0
    ink = font.render_text(text, scale)
    region = raster[v0 + scale : v0 + scale + ink.shape[0], u0 + scale : u0 + scale + ink.shape[1]]
    region[ink] = color


def _box_at(cu, cv, bw, bh, w, h):
    u0 = int(round(cu - bw / 2.0))
    v0 = int(round(cv - bh / 2.0))
    u0 = min(max(u0, 0), max(w - bw, 0))
    v0 = min(max(v0, 0), max(h - bh, 0))
    return (u0, v0, min(u0 + bw, w), min(v0 + bh, h))


def _box_overlap(a, b):
    du = min(a[2], b[2]) - max(a[0], b[0])
    dv = min(a[3], b[3]) - max(a[1], b[1])
    return max(du, 0) * max(dv, 0)


def label_candidates(bbox, bw, bh):
    """5x5 grid over the bbox followed by the 4 outside-adjacent positions."""
    u0, v0, u1, v1 = bbox
    cands = []
    for j in range(5):
        for i in range(5):
            cands.append((u0 + (i + 0.5) * (u1 - u0) / 5.0, v0 + (j + 0.5) * (v1 - v0) / 5.0))
    cu, cv = (u0 + u1) / 2.0, (v0 + v1) / 2.0
    cands += [
        (cu, v0 - bh / 2.0 - 1),
        (cu, v1 + bh / 2.0),
        (u0 - bw / 2.0 - 1, cv),
        (u1 + bw / 2.0, cv),
    ]
    return cands


def overlay_som(obs, mask, style=None):
    """Alpha-fill each segment, optionally stroke boxes and stamp numeric IDs."""
    style = style or MarkerStyle.for_image(obs.shape)
    if mask.shape != obs.shape:
        raise DimensionMismatch(f"mask {mask.shape} vs observation {obs.shape}")
    if mask.n > len(style.palette):
        raise PaletteExhausted(f"{mask.n} segments but palette has {len(style.palette)} colors")
    s = style.upscale
    rgb = obs.rgb
    labels = mask.labels
    if style.fill_alpha > 0 and mask.n:
        pal = np.zeros((256, 3), dtype=float)
        pal[1 : mask.n + 1] = np.asarray(style.palette[: mask.n], dtype=float)
        seg = labels > 0
        blended = np.rint((1.0 - style.fill_alpha) * rgb + style.fill_alpha * pal[labels])
        rgb = np.where(seg[..., None], blended, rgb).astype(np.uint8)
    out = _upscale(rgb, s)
    lab_up = _upscale(labels, s)
    h, w = lab_up.shape

    bboxes = {}
    for seg in mask.ids:
        u0, v0, u1, v1 = mask.bbox(seg)
        bboxes[seg] = (u0 * s, v0 * s, u1 * s, v1 * s)
    if style.draw_boxes:
        for seg in mask.ids:
            _stroke_rect(out, bboxes[seg], style.palette[seg - 1], max(2, s))

    placements = {}
    if style.overlay_ids and mask.n:
        for seg in mask.ids:
            text = str(seg)
            bw, bh, scale = _label_size(text, style)
            vs, us = np.nonzero(labels == seg)
            cu = us.mean() * s + (s - 1) / 2.0
            cv = vs.mean() * s + (s - 1) / 2.0
            best = None
            for idx, (pu, pv) in enumerate(label_candidates(bboxes[seg], bw, bh)):
                box = _box_at(pu, pv, bw, bh, w, h)
                patch = lab_up[box[1]:box[3], box[0]:box[2]]
                overlap = int(np.count_nonzero(patch)) - int(np.count_nonzero(patch == seg))
                overlap += sum(_box_overlap(box, b) for b in placements.values())
                bc = ((box[0] + box[2]) / 2.0, (box[1] + box[3]) / 2.0)
                score = (overlap, math.hypot(bc[0] - cu, bc[1] - cv), idx)
                if best is None or score < best[0]:
                    best = (score, box)
            placements[seg] = best[1]
            _draw_label(out, best[1], text, style.palette[seg - 1], scale)
    else:
        # placements still locate each segment for downstream consumers
        for seg in mask.ids:
            bw, bh, _ = _label_size(str(seg), style)
            u0, v0, u1, v1 = bboxes[seg]
            placements[seg] = _box_at((u0 + u1) / 2.0, (v0 + v1) / 2.0, bw, bh, w, h)
    return MarkedImage(out, placements, list(mask.ids))


def crop_roi(obs, mask, seg_id, margin_frac=0.2, min_side=0):
    if margin_frac < 0:
        raise ValueError("margin_frac must be >= 0")
    u0, v0, u1, v1 = mask.bbox(seg_id)
    mu = margin_frac * (u1 - u0)
    mv = margin_frac * (v1 - v0)
    a0, b0 = math.floor(u0 - mu + 1e-9), math.floor(v0 - mv + 1e-9)
    a1, b1 = math.ceil(u1 + mu - 1e-9), math.ceil(v1 + mv - 1e-9)
    if a1 - a0 < min_side:
        extra = int(min_side) - (a1 - a0)
        a0 -= extra // 2
        a1 += extra - extra // 2
    if b1 - b0 < min_side:
        extra = int(min_side) - (b1 - b0)
        b0 -= extra // 2
        b1 += extra - extra // 2
    h, w = obs.shape
    a0, b0 = max(a0, 0), max(b0, 0)
    a1, b1 = min(a1, w), min(b1, h)
    return RoiCrop(np.array(obs.rgb[b0:b1, a0:a1]), (a0, b0), seg_id)


def rectangle_corners(center, yaw, width, height):
    """Four corners of an oriented rectangle; the width axis is the opening axis."""
    if not (width > 0 and height > 0):
        raise DegenerateRectangle(f"width {width} and height {height} must be positive")
    c, s = math.cos(yaw), math.sin(yaw)
    hw, hh = width / 2.0, height / 2.0
    out = []
    for du, dv in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)):
        out.append((center[0] + c * du - s * dv, center[1] + s * du + c * dv))
    return out


def draw_grasp_markers(crop, grasps, style=None):
    """Draw each grasp as an oriented rectangle labelled with its 1-based rank."""
    style = style or MarkerStyle()
    if len(grasps) > len(style.palette):
        raise PaletteExhausted(f"{len(grasps)} grasps but palette has {len(style.palette)} colors")
    s = style.upscale
    cw, ch = crop.size
    local = []
    for i, g in enumerate(grasps, start=1):
        du = g.center_px[0] - crop.offset[0]
        dv = g.center_px[1] - crop.offset[1]
        if not (-0.5 <= du < cw - 0.5 and -0.5 <= dv < ch - 0.5):
            raise GraspOutsideCrop(f"grasp {i} at {g.center_px} outside crop")
        local.append((du * s + (s - 1) / 2.0, dv * s + (s - 1) / 2.0))

    img = Image.fromarray(_upscale(crop.raster, s))
    draw = ImageDraw.Draw(img)
    line_w = max(2, s)
    for i, g in enumerate(grasps):
        width = g.width_px * s
        corners = rectangle_corners(local[i], g.yaw, width, width / 2.0)
        draw.line(corners + [corners[0]], fill=style.palette[i], width=line_w)
    out = np.array(img)
    h, w = out.shape[:2]

    placements = {}
    for i, g in enumerate(grasps, start=1):
        text = str(i)
        bw, bh, scale = _label_size(text, style)
        width = g.width_px * s
        c, sn = math.cos(g.yaw), math.sin(g.yaw)
        reach_w = width / 2.0 + bw / 2.0 + line_w
        reach_h = width / 4.0 + bh / 2.0 + line_w
        cands = [
            (local[i - 1][0] + c * reach_w, local[i - 1][1] + sn * reach_w),
            (local[i - 1][0] - c * reach_w, local[i - 1][1] - sn * reach_w),
            (local[i - 1][0] - sn * reach_h, local[i - 1][1] + c * reach_h),
            (local[i - 1][0] + sn * reach_h, local[i - 1][1] - c * reach_h),
        ]
        best = None
        for idx, (pu, pv) in enumerate(cands):
            box = _box_at(pu, pv, bw, bh, w, h)
            score = (sum(_box_overlap(box, b) for b in placements.values()), idx)
            if best is None or score < best[0]:
                best = (score, box)
        placements[i] = best[1]
        _draw_label(out, best[1], text, style.palette[i - 1], scale)
    return MarkedImage(out, placements, list(range(1, len(grasps) + 1)))


def _luma(rgb):
    r, g, b = (rgb[..., i].astype(float) for i in range(3))
    y = np.rint(0.299 * r + 0.587 * g + 0.114 * b).clip(0, 255).astype(np.uint8)
    return np.repeat(y[..., None], 3, axis=-1)


def apply_transform(obs, mask, seg_id, kind, blur_radius=11, stroke=4):
    """Single-segment visual prompt; returns a new uint8 raster."""
    kind = VisualTransformKind(kind)
    member = mask.member(seg_id)
    if not member.any():
        raise UnknownSegment(f"segment {seg_id} has no pixels")
    rgb = obs.rgb
    u0, v0, u1, v1 = mask.bbox(seg_id)
    if kind is VisualTransformKind.CROP:
        return np.array(rgb[v0:v1, u0:u1])
    if kind is VisualTransformKind.WHITE_BACKGROUND:
        return np.where(member[..., None], rgb, 255).astype(np.uint8)
    if kind is VisualTransformKind.GRAY_REVERSE:
        return np.where(member[..., None], rgb, _luma(rgb)).astype(np.uint8)
    if kind is VisualTransformKind.BLUR_REVERSE:
        blurred = np.asarray(Image.fromarray(rgb).filter(ImageFilter.GaussianBlur(blur_radius)))
        return np.where(member[..., None], rgb, blurred).astype(np.uint8)
    if kind is VisualTransformKind.CONTOUR:
        inner = ndimage.binary_erosion(member, iterations=stroke, border_value=0)
        out = np.array(rgb)
        out[member & ~inner] = STROKE_COLOR
        return out
    img = Image.fromarray(np.array(rgb))
    draw = ImageDraw.Draw(img)
    if kind is VisualTransformKind.RECTANGLE:
        draw.rectangle([u0, v0, u1 - 1, v1 - 1], outline=STROKE_COLOR, width=stroke)
    else:
        draw.ellipse([u0, v0, u1 - 1, v1 - 1], outline=STROKE_COLOR, width=stroke)
    return np.array(img)
