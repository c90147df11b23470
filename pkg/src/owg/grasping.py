"""Planar grasp candidates: decoding from quality/angle/width rasters,
geometric antipodal synthesis on heightmaps, Hungarian region matching and
pixel-to-world conversion."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Set, Tuple

import numpy as np
from scipy import ndimage

from .errors import (
    DimensionMismatch,
    EmptyTarget,
    InvalidDepthAtGrasp,
    MissingWorldCentroid,
    NoViableGrasp,
)
from .imaging import deproject, project

MAX_OPENING = 0.140  # meters, Robotiq 2F-140
FINGER_PAD = 0.02  # meters, along and across the opening axis
FINGER_MARGIN = 0.01  # meters of free space between object and finger pad
SENTINEL_COST = 1e6

DEFAULT_K = 5
DEFAULT_NMS_RADIUS = 10.0
DEFAULT_MIN_QUALITY = 0.2


def normalize_yaw(yaw):
    """Map an angle into [-pi/2, pi/2); parallel-jaw grasps repeat every pi."""
    y = math.fmod(yaw + math.pi / 2, math.pi)
    if y < 0:
        y += math.pi
    y -= math.pi / 2
    if y >= math.pi / 2:
        y -= math.pi
    return y


@dataclass(frozen=True)
class WorldGrasp:
    x: float
    y: float
    z: float
    yaw: float
    width_m: float

    def to_dict(self, ndigits=6):
        return {k: round(float(v), ndigits) for k, v in
                (("x", self.x), ("y", self.y), ("z", self.z), ("yaw", self.yaw), ("width_m", self.width_m))}


@dataclass(frozen=True)
class Grasp4Dof:
    center_px: Tuple[float, float]
    yaw: float
    width_px: float
    quality: float
    world: Optional[WorldGrasp] = None

    def __post_init__(self):
        if not self.width_px > 0:
            raise ValueError("width_px must be positive")
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    def to_dict(self, ndigits=6):
        d = {
            "center_px": [round(float(c), ndigits) for c in self.center_px],
            "yaw": round(self.yaw, ndigits),
            "width_px": round(float(self.width_px), ndigits),
            "quality": round(float(self.quality), ndigits),
        }
        if self.world is not None:
            d["world"] = self.world.to_dict(ndigits)
        return d


@dataclass(frozen=True, eq=False)
class GraspMaps:
    quality: np.ndarray
    angle: np.ndarray
    width: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quality, dtype=float)
        a = np.asarray(self.angle, dtype=float)
        w = np.asarray(self.width, dtype=float)
        if not (q.shape == a.shape == w.shape) or q.ndim != 2:
            raise DimensionMismatch("quality, angle and width rasters must share a 2-D shape")
        if np.any(q < 0) or np.any(q > 1):
            raise ValueError("quality must lie in [0, 1]")
        if np.any(a < -math.pi / 2) or np.any(a >= math.pi / 2):
            raise ValueError("angle must lie in [-pi/2, pi/2)")
        if np.any(w < 0):
            raise ValueError("width must be non-negative")
        for name, arr in (("quality", q), ("angle", a), ("width", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def shape(self):
        return self.quality.shape


def write_grasp_maps(path, maps):
    h, w = maps.shape
    header = json.dumps({"h": h, "w": w, "planes": ["quality", "angle", "width"]})
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + b"\n")
        for plane in (maps.quality, maps.angle, maps.width):
            f.write(np.ascontiguousarray(plane, dtype="<f4").tobytes())


def read_grasp_maps(path):
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        h, w = int(header["h"]), int(header["w"])
        planes = {}
        for name in header["planes"]:
            buf = f.read(4 * h * w)
            if len(buf) != 4 * h * w:
                raise DimensionMismatch(f"plane {name} truncated in {path}")
            planes[name] = np.frombuffer(buf, dtype="<f4").reshape(h, w).astype(float)
    angle = np.clip(planes["angle"], -math.pi / 2, np.nextafter(math.pi / 2, 0))
    return GraspMaps(np.clip(planes["quality"], 0, 1), angle, planes["width"])


def local_maxima(quality, min_quality):
    """Boolean raster of cells >= every 8-neighbour, >= min_quality and > 0."""
    neigh = ndimage.maximum_filter(quality, size=3, mode="constant", cval=-np.inf)
    return (quality >= neigh) & (quality >= min_quality) & (quality > 0)


def decode_grasps(maps, k=DEFAULT_K, nms_radius=DEFAULT_NMS_RADIUS, min_quality=DEFAULT_MIN_QUALITY):
    """Greedy NMS over local quality maxima, best first."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if nms_radius < 0:
        raise ValueError("nms_radius must be >= 0")
    peaks = local_maxima(maps.quality, min_quality) & (maps.width > 0)
    rows, cols = np.nonzero(peaks)
    if rows.size == 0:
        raise NoViableGrasp(f"no grasp peak with quality >= {min_quality}")
    q = maps.quality[rows, cols]
    # quality descending, row-major on ties
    order = np.lexsort((cols, rows, -q))
    accepted = []
    r2 = nms_radius * nms_radius
    for i in order:
        r, c = rows[i], cols[i]
        if any((r - ar) ** 2 + (c - ac) ** 2 <= r2 for ar, ac in accepted):
            continue
        accepted.append((r, c))
        if len(accepted) == k:
            break
    return [
        Grasp4Dof((float(c), float(r)), float(maps.angle[r, c]), float(maps.width[r, c]),
                  float(maps.quality[r, c]))
        for r, c in accepted
    ]


def _sample(hm_cells, rows, cols):
    """Heights at fractional cell coordinates (nearest cell); outside = 0."""
    h, w = hm_cells.shape
    ri = np.floor(rows + 0.5).astype(np.int64)
    ci = np.floor(cols + 0.5).astype(np.int64)
    inside = (ri >= 0) & (ri < h) & (ci >= 0) & (ci < w)
    out = np.zeros(ri.shape)
    out[inside] = hm_cells[ri[inside], ci[inside]]
    return out, inside, ri, ci


def synthesize_antipodal(hm, mask_cells, n_yaws=8, clearance=0.02, max_opening=MAX_OPENING,
                         finger_margin=FINGER_MARGIN, finger_pad=FINGER_PAD):
    """Geometric stand-in for a grasp network on a heightmap.

    For every target cell and each of ``n_yaws`` opening axes the chord through
    the cell is measured; the gripper opens symmetrically to clear the farther
    edge plus ``finger_margin`` and the two finger pads must land on cells at
    least ``clearance`` below the cell. Among valid axes the narrowest opening
    wins. Quality is the distance to the mask boundary normalised to 1.
    """
    mask = np.asarray(mask_cells, dtype=bool)
    if mask.shape != hm.shape:
        raise DimensionMismatch("mask_cells must match the heightmap")
    if not mask.any():
        raise EmptyTarget("target has no heightmap cells")
    res = hm.resolution
    cells = hm.cells
    tr, tc = np.nonzero(mask)
    top = cells[tr, tc]
    edt = ndimage.distance_transform_edt(np.pad(mask, 1))[1:-1, 1:-1]
    centrality = edt[tr, tc] / edt.max()

    max_cells = max_opening / res
    step = 0.25
    ts = np.arange(step, max_cells + 2 * step, step)
    margin = finger_margin / res
    pad = finger_pad / res

    best_w = np.full(tr.size, np.inf)
    best_yaw = np.zeros(tr.size)
    for i in range(n_yaws):
        yaw = normalize_yaw(i * math.pi / n_yaws)
        dc, dr = math.cos(yaw), math.sin(yaw)
        reach = []
        for sign in (1.0, -1.0):
            rr = tr[:, None] + sign * dr * ts[None, :]
            cc = tc[:, None] + sign * dc * ts[None, :]
            _, inside, ri, ci = _sample(cells, rr, cc)
            member = np.zeros(ri.shape, dtype=bool)
            member[inside] = mask[ri[inside], ci[inside]]
            outside = ~member
            first_out = np.where(outside.any(axis=1), outside.argmax(axis=1), ts.size - 1)
            reach.append(ts[first_out])
        half = np.maximum(reach[0], reach[1]) + margin
        width = 2 * half
        ok = width <= max_cells + 1e-9
        # finger pads: [half, half + pad] along the axis, +-pad/2 across
        along = np.linspace(0.0, pad, 5)
        across = np.linspace(-pad / 2, pad / 2, 5)
        for sign in (1.0, -1.0):
            a = half[:, None, None] + along[None, :, None]
            a, b = np.broadcast_arrays(a, across[None, None, :])
            rr = tr[:, None, None] + sign * dr * a + dc * b
            cc = tc[:, None, None] + sign * dc * a - dr * b
            heights, _, _, _ = _sample(cells, rr, cc)
            ok &= np.all(heights <= (top - clearance + 1e-9)[:, None, None], axis=(1, 2))
        better = ok & (width < best_w - 1e-9)
        best_w = np.where(better, width, best_w)
        best_yaw = np.where(better, yaw, best_yaw)

    valid = np.isfinite(best_w)
    quality = np.zeros(hm.shape)
    angle = np.zeros(hm.shape)
    widths = np.zeros(hm.shape)
    quality[tr[valid], tc[valid]] = centrality[valid]
    angle[tr[valid], tc[valid]] = best_yaw[valid]
    widths[tr[valid], tc[valid]] = best_w[valid]
    return GraspMaps(quality, angle, widths)


def hungarian(cost):
    """Minimum-cost assignment for an n x m matrix (n <= m).

    Returns ``assign`` with ``assign[i]`` the column given to row ``i``.
    Shortest augmenting path with potentials, O(n^2 m).
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    if n > m:
        raise ValueError("hungarian expects rows <= columns")
    INF = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)  # p[j]: row (1-based) matched to column j
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = [-1] * n
    for j in range(1, m + 1):
        if p[j]:
            assign[p[j] - 1] = j - 1
    return assign


@dataclass(frozen=True)
class AssignmentResult:
    pairs: Dict[int, int]
    total_cost: float
    unmatched_regions: Set[int] = field(default_factory=set)
    unmatched_groups: Set[int] = field(default_factory=set)


def assign_costs(cost):
    """Optimal injective assignment of a rectangular cost matrix.

    Rows and columns are padded to a square with :data:`SENTINEL_COST`;
    pairs landing on padding are reported as unmatched.
    Returns ``(pairs, total, unmatched_rows, unmatched_cols)``.
    """
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    size = max(n, m)
    padded = np.full((size, size), SENTINEL_COST)
    padded[:n, :m] = cost
    assign = hungarian(padded)
    pairs = {i: assign[i] for i in range(n) if assign[i] < m}
    total = float(sum(cost[i, j] for i, j in pairs.items()))
    return pairs, total, set(range(n)) - set(pairs), set(range(m)) - set(pairs.values())


def match_regions(regions, grasp_groups):
    """Hungarian matching of segment centers to grasp-group centers (3-D
    Euclidean cost). ``pairs`` maps segment ID -> group index."""
    for r in regions:
        if r.world_centroid is None:
            raise MissingWorldCentroid(f"segment {r.id} has no world centroid")
    groups = np.asarray(grasp_groups, dtype=float).reshape(-1, 3)
    if not regions or groups.shape[0] == 0:
        return AssignmentResult({}, 0.0, {r.id for r in regions}, set(range(groups.shape[0])))
    centers = np.asarray([r.world_centroid for r in regions], dtype=float)
    cost = np.linalg.norm(centers[:, None, :] - groups[None, :, :], axis=-1)
    pairs, total, un_r, un_g = assign_costs(cost)
    return AssignmentResult(
        {regions[i].id: j for i, j in pairs.items()},
        total,
        {regions[i].id for i in un_r},
        un_g,
    )


def group_grasp_regions(maps, threshold=DEFAULT_MIN_QUALITY):
    """Connected components of the thresholded quality map.

    Returns ``(component_labels, [(u, v) centroid per component])``.
    """
    labels, n = ndimage.label(maps.quality >= threshold)
    cents = []
    for i in range(1, n + 1):
        vs, us = np.nonzero(labels == i)
        cents.append((float(us.mean()), float(vs.mean())))
    return labels, cents


def grasp_to_world(g, obs=None, hm=None):
    """Attach a world pose to a grasp expressed in camera or heightmap pixels."""
    if (obs is None) == (hm is None):
        raise ValueError("pass exactly one of obs or hm")
    u, v = g.center_px
    if hm is not None:
        row, col = int(math.floor(v + 0.5)), int(math.floor(u + 0.5))
        hg, wg = hm.shape
        if not (0 <= row < hg and 0 <= col < wg):
            raise InvalidDepthAtGrasp(f"grasp center {g.center_px} outside heightmap")
        x = hm.origin[0] + (u + 0.5) * hm.resolution
        y = hm.origin[1] + (v + 0.5) * hm.resolution
        z = hm.table_z + hm.cells[row, col]
        world = WorldGrasp(x, y, z, normalize_yaw(g.yaw), g.width_px * hm.resolution)
        return replace(g, world=world)
    cam = obs.camera
    row, col = int(math.floor(v + 0.5)), int(math.floor(u + 0.5))
    h, w = obs.shape
    if not (0 <= row < h and 0 <= col < w):
        raise InvalidDepthAtGrasp(f"grasp center {g.center_px} outside image")
    d = obs.depth[row, col]
    if not (np.isfinite(d) and d > 0):
        raise InvalidDepthAtGrasp(f"no valid depth at {g.center_px}")
    p = cam.to_world(deproject(u, v, d, cam))
    q = cam.to_world(deproject(u + math.cos(g.yaw), v + math.sin(g.yaw), d, cam))
    yaw_w = normalize_yaw(math.atan2(q[1] - p[1], q[0] - p[0]))
    width_m = g.width_px * d / cam.fx
    return replace(g, world=WorldGrasp(float(p[0]), float(p[1]), float(p[2]), yaw_w, float(width_m)))


def world_to_pixel(world, cam, quality=0.0):
    """Project a world grasp into a camera image as a pixel-space grasp."""
    axis = np.array([math.cos(world.yaw), math.sin(world.yaw), 0.0])
    c = np.array([world.x, world.y, world.z])
    pc = cam.to_camera(c)
    a = cam.to_camera(c + axis * world.width_m / 2)
    b = cam.to_camera(c - axis * world.width_m / 2)
    uc = project(pc, cam)
    ua, ub = project(a, cam), project(b, cam)
    width = math.hypot(ua[0] - ub[0], ua[1] - ub[1])
    yaw = math.atan2(ua[1] - ub[1], ua[0] - ub[0])
    return Grasp4Dof((float(uc[0]), float(uc[1])), yaw, width, quality, world)
