"""Rasters and camera geometry: scene I/O, label masks, pinhole projection,
orthographic heightmaps and per-segment statistics.

Conventions used throughout the package:

* pixel coordinates are ``(u, v)`` = (column, row), pixel centers at integer
  coordinates;
* camera frame is x right, y down, z along the optical axis; ``depth`` is the
  z coordinate of the surface point in the camera frame;
* the world frame is z up; heights are measured above the table plane.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from PIL import Image

from .errors import (
    DimensionMismatch,
    EmptyProjection,
    InvalidDepth,
    MissingFile,
    NonContiguousIds,
    UnknownSegment,
)

MAX_SEGMENTS = 255
DEPTH_QUANTUM = 0.001  # meters per unit of the 16-bit depth PNG


def _readonly(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    world_from_camera: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        T = np.asarray(self.world_from_camera, dtype=float)
        if T.shape != (4, 4):
            raise ValueError("world_from_camera must be 4x4")
        if not np.allclose(T[3], [0, 0, 0, 1], atol=0, rtol=0):
            raise ValueError("world_from_camera last row must be [0, 0, 0, 1]")
        R = T[:3, :3]
        if np.max(np.abs(R.T @ R - np.eye(3))) >= 1e-9:
            raise ValueError("world_from_camera rotation is not orthonormal")
        object.__setattr__(self, "world_from_camera", _readonly(T))

    @property
    def rotation(self):
        return self.world_from_camera[:3, :3]

    @property
    def position(self):
        return self.world_from_camera[:3, 3]

    def camera_from_world(self):
        R = self.rotation
        out = np.eye(4)
        out[:3, :3] = R.T
        out[:3, 3] = -R.T @ self.position
        return out

    def to_world(self, points):
        """Map camera-frame points (..., 3) into the world frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.position

    def to_camera(self, points):
        p = np.asarray(points, dtype=float)
        return (p - self.position) @ self.rotation

    def to_dict(self):
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "world_from_camera": [float(x) for x in self.world_from_camera.ravel()],
        }

    @classmethod
    def from_dict(cls, d):
        T = np.asarray(d.get("world_from_camera", np.eye(4).ravel()), dtype=float)
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), T.reshape(4, 4))

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (
            (self.fx, self.fy, self.cx, self.cy) == (other.fx, other.fy, other.cx, other.cy)
            and np.array_equal(self.world_from_camera, other.world_from_camera)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SceneObservation:
    """Registered RGB (uint8, HxWx3) and depth (float meters, HxW, 0 = invalid)."""

    rgb: np.ndarray
    depth: np.ndarray
    camera: CameraModel
    table_z: float = 0.0

    def __post_init__(self):
        rgb = np.asarray(self.rgb)
        depth = np.asarray(self.depth, dtype=float)
        if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
            raise ValueError("rgb must be an HxWx3 uint8 raster")
        if depth.shape != rgb.shape[:2]:
            raise DimensionMismatch(f"rgb {rgb.shape[:2]} vs depth {depth.shape}")
        if rgb.shape[0] < 32 or rgb.shape[1] < 32:
            raise ValueError("observation must be at least 32x32")
        finite = np.isfinite(depth)
        if np.any(depth[finite] < 0):
            raise ValueError("depth must be non-negative")
        object.__setattr__(self, "rgb", _readonly(rgb))
        object.__setattr__(self, "depth", _readonly(depth))

    @property
    def shape(self):
        return self.depth.shape

    def valid_depth(self):
        return np.isfinite(self.depth) & (self.depth > 0)


@dataclass(frozen=True, eq=False)
class LabelMask:
    """8-bit label raster: 0 is background, 1..N are segments."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2:
            raise ValueError("labels must be a 2-D raster")
        if lab.dtype != np.uint8:
            if lab.size and (lab.min() < 0 or lab.max() > MAX_SEGMENTS):
                raise ValueError("label IDs must fit in 8 bits")
            lab = lab.astype(np.uint8)
        present = np.unique(lab)
        present = present[present != 0]
        n = int(present.max()) if present.size else 0
        if present.size != n:
            missing = sorted(set(range(1, n + 1)) - set(int(x) for x in present))
            raise NonContiguousIds(f"segment IDs not contiguous; missing {missing}")
        object.__setattr__(self, "labels", _readonly(lab))
        object.__setattr__(self, "_n", n)

    @property
    def n(self):
        return self._n

    @property
    def shape(self):
        return self.labels.shape

    @property
    def ids(self):
        return list(range(1, self._n + 1))

    def member(self, seg_id):
        if not 1 <= seg_id <= self._n:
            raise UnknownSegment(f"segment {seg_id} not in 1..{self._n}")
        return self.labels == seg_id

    def bbox(self, seg_id):
        """Half-open bbox ``(u_min, v_min, u_max, v_max)`` of a segment."""
        vs, us = np.nonzero(self.member(seg_id))
        if us.size == 0:
            raise UnknownSegment(f"segment {seg_id} is empty")
        return int(us.min()), int(vs.min()), int(us.max()) + 1, int(vs.max()) + 1

    @classmethod
    def from_relabel(cls, labels):
        """Renumber arbitrary non-negative IDs to 1..N in ascending order."""
        lab = np.asarray(labels)
        present = [int(x) for x in np.unique(lab) if x != 0]
        lut = np.zeros(int(lab.max()) + 1 if lab.size else 1, dtype=np.uint8)
        for i, old in enumerate(present, start=1):
            lut[old] = i
        return cls(lut[lab])


@dataclass(frozen=True)
class SegmentStats:
    id: int
    pixel_centroid: Tuple[float, float]
    bbox: Tuple[int, int, int, int]
    area_px: int
    world_centroid: Optional[Tuple[float, float, float]]


@dataclass(frozen=True, eq=False)
class Heightmap:
    """Top-down height raster. Cell ``(row, col)`` spans
    ``x in origin_x + [col, col+1) * resolution`` and
    ``y in origin_y + [row, row+1) * resolution``."""

    cells: np.ndarray
    resolution: float
    origin: Tuple[float, float]
    color_cells: Optional[np.ndarray] = None
    table_z: float = 0.0

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        cells = np.maximum(np.asarray(self.cells, dtype=float), 0.0)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValueError("heightmap needs at least one cell")
        object.__setattr__(self, "cells", _readonly(cells))
        if self.color_cells is not None:
            object.__setattr__(self, "color_cells", _readonly(self.color_cells))

    @property
    def shape(self):
        return self.cells.shape

    def cell_center(self, row, col):
        return (
            self.origin[0] + (col + 0.5) * self.resolution,
            self.origin[1] + (row + 0.5) * self.resolution,
        )

    def cell_of(self, x, y):
        return (
            int(np.floor((y - self.origin[1]) / self.resolution)),
            int(np.floor((x - self.origin[0]) / self.resolution)),
        )


def project(point, cam):
    """Camera-frame point -> (u, v)."""
    x, y, z = point
    return (cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy)


def deproject(u, v, depth, cam):
    """Pixel + depth -> camera-frame point (x, y, z)."""
    if not np.isfinite(depth) or depth <= 0:
        raise InvalidDepth(f"depth must be positive and finite, got {depth}")
    return ((u - cam.cx) * depth / cam.fx, (v - cam.cy) * depth / cam.fy, depth)


def deproject_image(depth, cam):
    """Vectorised deprojection of a whole depth raster, shape (H, W, 3)."""
    h, w = depth.shape
    v, u = np.mgrid[0:h, 0:w].astype(float)
    x = (u - cam.cx) * depth / cam.fx
    y = (v - cam.cy) * depth / cam.fy
    return np.stack([x, y, depth], axis=-1)


def _check_same_shape(mask, obs):
    if mask.shape != obs.shape:
        raise DimensionMismatch(f"mask {mask.shape} vs observation {obs.shape}")


def segment_stats(mask, obs):
    _check_same_shape(mask, obs)
    out = []
    if mask.n == 0:
        return out
    lab = mask.labels
    valid = obs.valid_depth()
    pts = obs.camera.to_world(deproject_image(np.where(valid, obs.depth, 0.0), obs.camera))
    for seg in mask.ids:
        member = lab == seg
        vs, us = np.nonzero(member)
        centroid = (float(us.mean()), float(vs.mean()))
        bbox = (int(us.min()), int(vs.min()), int(us.max()) + 1, int(vs.max()) + 1)
        good = member & valid
        world = None
        if good.any():
            world = tuple(float(c) for c in pts[good].mean(axis=0))
        out.append(SegmentStats(seg, centroid, bbox, int(us.size), world))
    return out


def orthographic_heightmap(obs, bounds, resolution, table_z=None):
    """Project every valid depth pixel into a world-aligned height grid.

    ``bounds`` is ``(x_min, y_min, x_max, y_max)`` in world meters. Cell value is
    the highest point above ``table_z`` (defaults to ``obs.table_z``) landing in
    it; color cells take the RGB of that highest point.
    """
    x0, y0, x1, y1 = (float(b) for b in bounds)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate bounds {bounds}")
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    tz = obs.table_z if table_z is None else table_z
    wg = max(1, int(round((x1 - x0) / resolution)))
    hg = max(1, int(round((y1 - y0) / resolution)))

    valid = obs.valid_depth()
    pts = obs.camera.to_world(deproject_image(np.where(valid, obs.depth, 0.0), obs.camera))
    pts = pts[valid]
    colors = obs.rgb[valid]
    col = np.floor((pts[:, 0] - x0) / resolution).astype(np.int64)
    row = np.floor((pts[:, 1] - y0) / resolution).astype(np.int64)
    inside = (col >= 0) & (col < wg) & (row >= 0) & (row < hg)
    if not inside.any():
        raise EmptyProjection("no valid depth pixel lands inside the heightmap bounds")
    col, row = col[inside], row[inside]
    heights = np.maximum(pts[inside, 2] - tz, 0.0)
    colors = colors[inside]

    flat = row * wg + col
    # sort so the highest point per cell comes last; stable on ties
    order = np.lexsort((heights, flat))
    flat, heights, colors = flat[order], heights[order], colors[order]
    last = np.ones(flat.size, dtype=bool)
    last[:-1] = flat[1:] != flat[:-1]
    cells = np.zeros(hg * wg)
    color_cells = np.zeros((hg * wg, 3), dtype=np.uint8)
    cells[flat[last]] = heights[last]
    color_cells[flat[last]] = colors[last]
    return Heightmap(
        cells.reshape(hg, wg),
        float(resolution),
        (x0, y0),
        color_cells.reshape(hg, wg, 3),
        table_z=float(tz),
    )


def mask_rgbd(obs, mask, seg_id):
    """Zero every pixel outside segment ``seg_id`` in both rgb and depth."""
    _check_same_shape(mask, obs)
    member = mask.member(seg_id)
    if not member.any():
        raise UnknownSegment(f"segment {seg_id} has no pixels")
    rgb = np.where(member[..., None], obs.rgb, 0).astype(np.uint8)
    depth = np.where(member, obs.depth, 0.0)
    return SceneObservation(rgb, depth, obs.camera, obs.table_z)


# ---------------------------------------------------------------------------
# file I/O


def encode_png(raster):
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(raster)).save(buf, format="PNG", compress_level=1)
    return buf.getvalue()


def _read_png(path):
    if not os.path.exists(path):
        raise MissingFile(f"missing raster {path}")
    with Image.open(path) as im:
        im.load()
        return im


def raster_digest(raster):
    """Content hash of a raster: sha256 over its shape, dtype and bytes."""
    a = np.ascontiguousarray(raster)
    h = hashlib.sha256()
    h.update(f"{a.shape}|{a.dtype.str}|".encode())
    h.update(a.tobytes())
    return h.hexdigest()


def depth_to_mm(depth):
    d = np.where(np.isfinite(depth), depth, 0.0)
    return np.clip(np.round(d / DEPTH_QUANTUM), 0, 65535).astype(np.uint16)


def save_scene(path, obs, mask, stem=None):
    """Write a scene descriptor plus its three PNG rasters next to it."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    stem = stem or os.path.splitext(os.path.basename(path))[0]
    names = {"rgb": f"{stem}.png", "depth_mm": f"{stem}_d.png", "labels": f"{stem}_m.png"}
    Image.fromarray(obs.rgb).save(os.path.join(folder, names["rgb"]))
    Image.fromarray(depth_to_mm(obs.depth)).save(os.path.join(folder, names["depth_mm"]))
    Image.fromarray(mask.labels).save(os.path.join(folder, names["labels"]))
    desc = dict(names, camera=obs.camera.to_dict(), table_z=float(obs.table_z))
    with open(path, "w") as f:
        json.dump(desc, f, indent=2)
    return path


def load_scene(path):
    path = os.fspath(path)
    if not os.path.exists(path):
        raise MissingFile(f"missing scene descriptor {path}")
    with open(path) as f:
        desc = json.load(f)
    folder = os.path.dirname(os.path.abspath(path))
    try:
        rgb_im = _read_png(os.path.join(folder, desc["rgb"]))
        depth_im = _read_png(os.path.join(folder, desc["depth_mm"]))
        lab_im = _read_png(os.path.join(folder, desc["labels"]))
        cam = CameraModel.from_dict(desc["camera"])
    except KeyError as e:
        raise MissingFile(f"scene descriptor {path} lacks field {e}") from None
    rgb = np.asarray(rgb_im.convert("RGB"))
    depth = np.asarray(depth_im).astype(np.float64) * DEPTH_QUANTUM
    labels = np.asarray(lab_im.convert("L"))
    if not (rgb.shape[:2] == depth.shape == labels.shape):
        raise DimensionMismatch(
            f"rgb {rgb.shape[:2]}, depth {depth.shape}, labels {labels.shape} differ"
        )
    obs = SceneObservation(rgb, depth, cam, float(desc.get("table_z", 0.0)))
    return obs, LabelMask(labels)
