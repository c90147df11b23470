"""Deterministic 2.5D tabletop simulator.

Objects are convex polygons extruded from the table plane. Observations are
ray cast through a pinhole camera, grasps are judged geometrically, and every
random choice flows from one seed.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np
from shapely import affinity
from shapely.geometry import LineString, Point, Polygon, box

from .errors import NoFreeSpace, PlacementExhausted, UnknownObject
from .grasping import FINGER_PAD, MAX_OPENING
from .imaging import DEPTH_QUANTUM, CameraModel, LabelMask, SceneObservation

TABLE_COLOR = (176, 164, 140)
WORKSPACE = (0.15, -0.35, 0.85, 0.35)
PLACE_REGION = (1.05, -0.3, 1.35, 0.3)
IMAGE_SIZE = 256
CAMERA_HEIGHT = 1.0
CONTACT_EPS = 0.005
COLLISION_MARGIN = 0.01
D_MIN = 0.05
MAX_SAMPLES = 10_000
PLACE_GRID = 0.02


def _box_fp(length, width):
    return [(-length / 2, -width / 2), (length / 2, -width / 2), (length / 2, width / 2), (-length / 2, width / 2)]


def _circle_fp(radius, n=12):
    return [(radius * math.cos(2 * math.pi * i / n), radius * math.sin(2 * math.pi * i / n)) for i in range(n)]


@dataclass(frozen=True)
class SimObject:
    name: str
    category: str
    footprint: Tuple[Tuple[float, float], ...]
    height: float
    pose: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    color: Tuple[int, int, int] = (128, 128, 128)
    attributes: Tuple[str, ...] = ()

    def __post_init__(self):
        fp = tuple((float(x), float(y)) for x, y in self.footprint)
        object.__setattr__(self, "footprint", fp)
        object.__setattr__(self, "pose", tuple(float(p) for p in self.pose))
        object.__setattr__(self, "color", tuple(int(c) for c in self.color))
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if len(fp) < 3:
            raise ValueError(f"{self.name}: footprint needs >= 3 vertices")
        poly = Polygon(fp)
        if not poly.is_valid or poly.area <= 0:
            raise ValueError(f"{self.name}: footprint must have positive area")
        if abs(poly.convex_hull.area - poly.area) > 1e-12:
            raise ValueError(f"{self.name}: footprint must be convex")
        if not self.height > 0:
            raise ValueError(f"{self.name}: height must be positive")

    def at(self, x, y, yaw):
        return SimObject(self.name, self.category, self.footprint, self.height, (x, y, yaw),
                         self.color, self.attributes)

    def polygon(self):
        """Footprint in world coordinates, counter-clockwise."""
        x, y, yaw = self.pose
        c, s = math.cos(yaw), math.sin(yaw)
        pts = [(x + c * px - s * py, y + s * px + c * py) for px, py in self.footprint]
        poly = Polygon(pts)
        if not poly.exterior.is_ccw:
            poly = Polygon(pts[::-1])
        return poly

    def to_dict(self):
        d = asdict(self)
        d["footprint"] = [list(p) for p in self.footprint]
        d["pose"] = list(self.pose)
        d["color"] = list(self.color)
        d["attributes"] = list(self.attributes)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["category"], [tuple(p) for p in d["footprint"]], d["height"],
                   tuple(d["pose"]), tuple(d["color"]), tuple(d.get("attributes", ())))


def _obj(name, category, fp, height, color, *attributes):
    return SimObject(name, category, tuple(fp), height, (0, 0, 0), color, attributes)


# (elongated) targets for blocker scenes are the objects whose long side
# exceeds the gripper opening while the short side fits.
CATALOG = (
    _obj("red mug", "mug", _circle_fp(0.04), 0.09, (200, 40, 40), "red", "ceramic"),
    _obj("blue mug", "mug", _circle_fp(0.04), 0.09, (40, 70, 200), "blue", "ceramic"),
    _obj("green apple", "apple", _circle_fp(0.035), 0.07, (70, 180, 60), "green", "small", "fruit"),
    _obj("banana", "banana", _box_fp(0.18, 0.04), 0.04, (235, 210, 50), "yellow", "elongated", "fruit"),
    _obj("cereal box", "box", _box_fp(0.20, 0.07), 0.20, (230, 120, 30), "orange", "tall", "large"),
    _obj("milk carton", "carton", _box_fp(0.07, 0.07), 0.19, (240, 240, 235), "white", "tall"),
    _obj("juice box", "box", _box_fp(0.10, 0.06), 0.15, (150, 60, 160), "purple", "tall"),
    _obj("sponge", "sponge", _box_fp(0.09, 0.06), 0.03, (250, 220, 120), "yellow", "soft"),
    _obj("toothpaste", "toothpaste", _box_fp(0.18, 0.045), 0.045, (235, 235, 250), "white", "elongated"),
    _obj("screwdriver", "tool", _box_fp(0.19, 0.03), 0.03, (210, 60, 60), "red", "elongated", "tool"),
    _obj("soda can", "can", _circle_fp(0.033), 0.12, (190, 20, 30), "red", "metal"),
    _obj("bowl", "bowl", _circle_fp(0.055), 0.06, (100, 150, 210), "blue", "round"),
    _obj("tennis ball", "ball", _circle_fp(0.033), 0.066, (200, 230, 60), "yellow", "round", "small"),
    _obj("book", "book", _box_fp(0.20, 0.10), 0.03, (60, 90, 60), "green", "flat"),
    _obj("spray bottle", "bottle", _circle_fp(0.04), 0.20, (90, 200, 200), "cyan", "tall"),
    _obj("rubik cube", "toy", _box_fp(0.057, 0.057), 0.057, (240, 150, 40), "orange", "small"),
    _obj("stapler", "tool", _box_fp(0.16, 0.04), 0.05, (50, 50, 55), "black", "elongated", "tool"),
    _obj("flashlight", "tool", _box_fp(0.17, 0.04), 0.04, (120, 120, 130), "gray", "elongated", "tool"),
    _obj("pringles can", "can", _circle_fp(0.038), 0.20, (220, 40, 60), "red", "tall"),
    _obj("tissue box", "box", _box_fp(0.22, 0.10), 0.12, (120, 190, 240), "light blue", "large"),
    _obj("wooden block", "block", _box_fp(0.20, 0.05), 0.12, (160, 110, 60), "brown", "tall"),
    _obj("glue stick", "stationery", _circle_fp(0.015), 0.09, (250, 250, 120), "yellow", "small"),
)


def _extent(obj):
    poly = Polygon(obj.footprint)
    minx, miny, maxx, maxy = poly.bounds
    return maxx - minx, maxy - miny


def blocker_targets(catalog=CATALOG):
    out = []
    for o in catalog:
        length, width = _extent(o)
        if length > MAX_OPENING and width + 0.04 <= MAX_OPENING and o.height <= 0.06:
            out.append(o)
    return out


def blockers_for(target, catalog=CATALOG):
    length, _ = _extent(target)
    out = []
    for o in catalog:
        ol, ow = _extent(o)
        if o is not target and ol >= length and o.height >= target.height + 0.05 and ow + 0.02 <= MAX_OPENING:
            out.append(o)
    return out


@dataclass
class SimScene:
    objects: List[SimObject]
    table_z: float = 0.0
    workspace: Tuple[float, float, float, float] = WORKSPACE
    rng_seed: int = 0

    def index(self, name):
        for i, o in enumerate(self.objects):
            if o.name == name:
                return i
        raise UnknownObject(f"no object named {name!r}")

    def get(self, name):
        return self.objects[self.index(name)]

    def to_dict(self):
        return {
            "rng_seed": self.rng_seed,
            "table_z": self.table_z,
            "workspace": list(self.workspace),
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d):
        return cls([SimObject.from_dict(o) for o in d["objects"]], float(d["table_z"]),
                   tuple(d["workspace"]), int(d["rng_seed"]))

    def dump(self, path, **extra):
        with open(path, "w") as f:
            json.dump(dict(self.to_dict(), **extra), f, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class SceneConfig:
    scenario: str = "isolated"
    n_objects: int = 5
    seed: int = 0
    catalog: Tuple[SimObject, ...] = CATALOG
    d_min: float = D_MIN
    contact_eps: float = CONTACT_EPS
    blocker: bool = True
    clearance_rest: float = 0.04
    table_z: float = 0.0
    workspace: Tuple[float, float, float, float] = WORKSPACE


@dataclass
class GeneratedScene:
    scene: SimScene
    target: str
    query: str


def _inside(poly, ws):
    return box(*ws).contains(poly)


def _random_pose(rng, obj, ws, center_box=None):
    x0, y0, x1, y1 = center_box or ws
    return obj.at(float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)), float(rng.uniform(0, math.pi)))


def generate_scene(cfg):
    """Seeded scene with a designated target.

    ``isolated``: every pair of footprints at least ``d_min`` apart.
    ``cluttered``: the target is placed first and at least one neighbour is
    put within ``contact_eps`` of it; with ``blocker`` that neighbour is a tall
    object flush against the side the gripper would need.
    """
    if cfg.scenario not in ("isolated", "cluttered"):
        raise ValueError(f"unknown scenario {cfg.scenario!r}")
    if not cfg.catalog:
        raise ValueError("catalog is empty")
    if not 5 <= cfg.n_objects <= 15:
        raise ValueError("n_objects must lie in [5, 15]")
    if cfg.n_objects > len(cfg.catalog):
        raise ValueError("catalog smaller than n_objects")
    rng = np.random.default_rng(cfg.seed)
    ws = cfg.workspace
    budget = [MAX_SAMPLES]

    def draw():
        if budget[0] <= 0:
            raise PlacementExhausted(f"no valid placement after {MAX_SAMPLES} samples")
        budget[0] -= 1

    placed: List[SimObject] = []
    pool = list(cfg.catalog)

    def take(candidates):
        i = int(rng.integers(len(candidates)))
        obj = candidates[i]
        pool.remove(obj)
        return obj

    if cfg.scenario == "isolated":
        chosen = [take(pool) for _ in range(cfg.n_objects)]
        # largest footprints first; small ones fill the gaps
        for obj in sorted(chosen, key=lambda o: -Polygon(o.footprint).area):
            while True:
                draw()
                cand = _random_pose(rng, obj, ws)
                poly = cand.polygon()
                if _inside(poly, ws) and all(poly.distance(p.polygon()) >= cfg.d_min for p in placed):
                    placed.append(cand)
                    break
        target = placed[int(rng.integers(len(placed)))]
        placed.sort(key=lambda o: [c.name for c in chosen].index(o.name))
    else:
        cx, cy = (ws[0] + ws[2]) / 2, (ws[1] + ws[3]) / 2
        inner = (cx - 0.1, cy - 0.1, cx + 0.1, cy + 0.1)
        if cfg.blocker:
            target_obj = take([o for o in blocker_targets(pool)])
            blocker_obj = take([o for o in blockers_for(target_obj, pool)])
        else:
            target_obj = take(pool)
            blocker_obj = take(pool)
        while True:
            draw()
            target = _random_pose(rng, target_obj, ws, inner)
            if _inside(target.polygon(), ws):
                break
        placed.append(target)
        while True:
            draw()
            neighbour = _contact_pose(rng, target, blocker_obj, cfg, (cx, cy))
            if neighbour is not None and _inside(neighbour.polygon(), ws):
                placed.append(neighbour)
                break
        for _ in range(cfg.n_objects - 2):
            obj = take(pool)
            while True:
                draw()
                cand = _random_pose(rng, obj, ws)
                poly = cand.polygon()
                if not _inside(poly, ws):
                    continue
                near = [poly.distance(p.polygon()) for p in placed[:2]]
                rest = [poly.distance(p.polygon()) for p in placed[2:]]
                if min(near) >= cfg.clearance_rest and all(d > cfg.contact_eps for d in rest):
                    placed.append(cand)
                    break
    scene = SimScene(placed, cfg.table_z, ws, cfg.seed)
    return GeneratedScene(scene, target.name, f"grasp the {target.name}")


def _contact_pose(rng, target, obj, cfg, nadir):
    gap = float(rng.uniform(0.0005, cfg.contact_eps - 0.001))
    tx, ty, tyaw = target.pose
    if cfg.blocker:
        # parallel and flush against the long side facing away from the nadir
        _, tw = _extent(target)
        _, ow = _extent(obj)
        nx, ny = -math.sin(tyaw), math.cos(tyaw)
        if (tx - nadir[0]) * nx + (ty - nadir[1]) * ny < 0:
            nx, ny = -nx, -ny
        dist = tw / 2 + ow / 2 + gap
        along = float(rng.uniform(-0.01, 0.01))
        x = tx + nx * dist + math.cos(tyaw) * along
        y = ty + ny * dist + math.sin(tyaw) * along
        cand = obj.at(x, y, tyaw)
    else:
        theta = float(rng.uniform(0, 2 * math.pi))
        yaw = float(rng.uniform(0, math.pi))
        tpoly = target.polygon()
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = (lo + hi) / 2
            c = obj.at(tx + mid * math.cos(theta), ty + mid * math.sin(theta), yaw)
            if c.polygon().distance(tpoly) < gap:
                lo = mid
            else:
                hi = mid
        cand = obj.at(tx + hi * math.cos(theta), ty + hi * math.sin(theta), yaw)
    d = cand.polygon().distance(target.polygon())
    if not (0 < d <= cfg.contact_eps):
        return None
    return cand


# ---------------------------------------------------------------------------
# rendering


def default_camera(workspace=WORKSPACE, table_z=0.0, size=IMAGE_SIZE, height=CAMERA_HEIGHT, yaw=0.0):
    """Top-down pinhole camera above the workspace center.

    ``yaw`` rotates the camera about its optical axis.
    """
    x0, y0, x1, y1 = workspace
    half = max(x1 - x0, y1 - y0) / 2 + 0.02
    f = (size / 2) * height / half
    c, s = math.cos(yaw), math.sin(yaw)
    # camera x -> world x, camera y -> world -y, camera z -> world -z, then yaw
    base = np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]])
    rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    T = np.eye(4)
    T[:3, :3] = base @ rz
    T[:3, 3] = [(x0 + x1) / 2, (y0 + y1) / 2, table_z + height]
    return CameraModel(f, f, (size - 1) / 2, (size - 1) / 2, T)


@dataclass(frozen=True, eq=False)
class Rendering:
    obs: SceneObservation
    mask: LabelMask
    object_names: Tuple[str, ...]  # object_names[label - 1]

    def label_of(self, name):
        try:
            return self.object_names.index(name) + 1
        except ValueError:
            return None


def _ray_hits(origin, dirs, poly, z_lo, z_hi):
    """Cyrus-Beck clip of rays against an extruded convex polygon.

    Returns ``(t_enter, top_face)`` with ``t_enter = inf`` where missed.
    """
    n = dirs.shape[0]
    t_in = np.zeros(n)
    t_out = np.full(n, np.inf)
    top_face = np.zeros(n, dtype=bool)
    hit = np.ones(n, dtype=bool)
    pts = list(poly.exterior.coords)[:-1]
    planes = []
    for (ax, ay), (bx, by) in zip(pts, pts[1:] + pts[:1]):
        nx, ny = by - ay, -(bx - ax)  # outward for a CCW polygon
        planes.append((np.array([nx, ny, 0.0]), nx * ax + ny * ay, False))
    planes.append((np.array([0.0, 0.0, 1.0]), z_hi, True))
    planes.append((np.array([0.0, 0.0, -1.0]), -z_lo, False))
    for normal, offset, is_top in planes:
        nd = dirs @ normal
        no = float(origin @ normal)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (offset - no) / nd
        entering = nd < 0
        leaving = nd > 0
        parallel = nd == 0
        hit &= ~(parallel & (no > offset))
        upd = entering & (t > t_in)
        t_in = np.where(upd, t, t_in)
        top_face = np.where(upd, is_top, top_face)
        t_out = np.where(leaving, np.minimum(t_out, t), t_out)
    hit &= t_in <= t_out
    hit &= t_out > 0
    return np.where(hit, t_in, np.inf), top_face


def render(scene, cam, size=IMAGE_SIZE):
    """Ray cast ``scene``; depth is quantized to whole millimeters."""
    h = w = int(size)
    v, u = np.mgrid[0:h, 0:w].astype(float)
    d_cam = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    dirs = d_cam @ cam.rotation.T
    origin = np.asarray(cam.position, dtype=float)

    best_t = np.full(h * w, np.inf)
    best_obj = np.full(h * w, -1)
    best_top = np.zeros(h * w, dtype=bool)
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_table = np.where(dz < 0, (scene.table_z - origin[2]) / dz, np.inf)
    best_t = np.where(t_table > 0, t_table, np.inf)
    for i, obj in enumerate(scene.objects):
        t, top = _ray_hits(origin, dirs, obj.polygon(), scene.table_z, scene.table_z + obj.height)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_obj = np.where(closer, i, best_obj)
        best_top = np.where(closer, top, best_top)

    rgb = np.empty((h * w, 3), dtype=np.uint8)
    rgb[:] = TABLE_COLOR
    for i, obj in enumerate(scene.objects):
        sel = best_obj == i
        col = np.asarray(obj.color, dtype=float)
        rgb[sel & best_top] = obj.color
        rgb[sel & ~best_top] = np.rint(col * 0.7).astype(np.uint8)
    depth = np.where(np.isfinite(best_t), np.round(best_t / DEPTH_QUANTUM) * DEPTH_QUANTUM, 0.0)

    raw = best_obj.reshape(h, w)
    flat = raw.ravel()
    seen = flat[flat >= 0]
    _, first = np.unique(seen, return_index=True)
    order = [int(seen[j]) for j in sorted(first)]
    lut = np.zeros(len(scene.objects) + 1, dtype=np.uint8)
    for label, obj_index in enumerate(order, start=1):
        lut[obj_index + 1] = label
    labels = lut[raw + 1]
    obs = SceneObservation(rgb.reshape(h, w, 3), depth.reshape(h, w), cam, scene.table_z)
    return Rendering(obs, LabelMask(labels), tuple(scene.objects[i].name for i in order))


def render_observation(scene, cam, size=IMAGE_SIZE):
    r = render(scene, cam, size)
    return r.obs, r.mask


# ---------------------------------------------------------------------------
# grasp and place primitives


@dataclass(frozen=True)
class GraspOutcome:
    success: bool
    reason: str

    def __post_init__(self):
        if self.reason not in ("ok", "miss", "collision", "width_exceeded"):
            raise ValueError(f"bad outcome reason {self.reason!r}")
        if self.success != (self.reason == "ok"):
            raise ValueError("success must coincide with reason 'ok'")


@dataclass(frozen=True)
class PlaceOutcome:
    pose: Tuple[float, float, float]


def chord_length(poly, x, y, yaw, reach=1.0):
    c, s = math.cos(yaw), math.sin(yaw)
    line = LineString([(x - c * reach, y - s * reach), (x + c * reach, y + s * reach)])
    inter = poly.intersection(line)
    if inter.is_empty:
        return 0.0
    # the chord through the center: the connected piece containing it
    geoms = getattr(inter, "geoms", [inter])
    p = Point(x, y)
    for g in geoms:
        if g.distance(p) < 1e-9:
            return g.length
    return 0.0


def finger_pads(x, y, yaw, width_m, pad=FINGER_PAD):
    c, s = math.cos(yaw), math.sin(yaw)
    out = []
    for sign in (1.0, -1.0):
        off = width_m / 2 + pad / 2
        cx, cy = x + sign * c * off, y + sign * s * off
        rect = box(-pad / 2, -pad / 2, pad / 2, pad / 2)
        rect = affinity.rotate(rect, yaw, origin=(0, 0), use_radians=True)
        out.append(affinity.translate(rect, cx, cy))
    return out


def judge_grasp(scene, object_name, grasp):
    """Outcome of a world grasp on an object, without touching the scene."""
    target = scene.get(object_name)
    poly = target.polygon()
    if not poly.covers(Point(grasp.x, grasp.y)):
        return GraspOutcome(False, "miss")
    if grasp.width_m > MAX_OPENING + 1e-9 or chord_length(poly, grasp.x, grasp.y, grasp.yaw) > grasp.width_m:
        return GraspOutcome(False, "width_exceeded")
    top = scene.table_z + target.height
    for pad in finger_pads(grasp.x, grasp.y, grasp.yaw, grasp.width_m):
        for other in scene.objects:
            if other.name == object_name:
                continue
            if scene.table_z + other.height > top - COLLISION_MARGIN and pad.intersection(other.polygon()).area > 0:
                return GraspOutcome(False, "collision")
    return GraspOutcome(True, "ok")


def execute_grasp(scene, object_name, grasp):
    """Judge the grasp and, on success, remove the object from the scene."""
    outcome = judge_grasp(scene, object_name, grasp)
    if outcome.success:
        del scene.objects[scene.index(object_name)]
    return outcome


def place_object(scene, obj, region=PLACE_REGION, grid=PLACE_GRID):
    """Insert ``obj`` at the first collision-free pose of a row-major grid scan."""
    x0, y0, x1, y1 = region
    reg = box(*region)
    others = [o.polygon() for o in scene.objects]
    ny = int(math.floor((y1 - y0) / grid + 1e-9)) + 1
    nx = int(math.floor((x1 - x0) / grid + 1e-9)) + 1
    for j in range(ny):
        for i in range(nx):
            cand = obj.at(x0 + i * grid, y0 + j * grid, 0.0)
            poly = cand.polygon()
            if reg.contains(poly) and all(poly.distance(p) > 1e-6 for p in others):
                scene.objects.append(cand)
                return PlaceOutcome(cand.pose)
    raise NoFreeSpace(f"no free pose for {obj.name} in region {region}")


def blocking_neighbours(scene, object_name, reach=0.01):
    """Objects within ``reach`` of the target that stand taller than the
    collision threshold; these are what a planner should remove first."""
    target = scene.get(object_name)
    poly = target.polygon()
    top = scene.table_z + target.height
    out = []
    for o in scene.objects:
        if o.name == object_name:
            continue
        if scene.table_z + o.height > top - COLLISION_MARGIN and o.polygon().distance(poly) <= reach:
            out.append(o.name)
    return out


class SimEnv:
    """Environment handle over a :class:`SimScene` for the closed loop."""

    def __init__(self, scene, target, query=None, camera=None, size=IMAGE_SIZE, place_region=PLACE_REGION):
        self.scene = scene
        self.target = target
        self.query = query or f"grasp the {target}"
        self.camera = camera or default_camera(scene.workspace, scene.table_z, size)
        self.size = size
        self.place_region = place_region
        x0, y0, x1, y1 = scene.workspace
        self.bounds = (x0 - 0.02, y0 - 0.02, x1 + 0.02, y1 + 0.02)
        self.last: Optional[Rendering] = None

    @classmethod
    def generate(cls, scenario, seed, n_objects=None, **kw):
        n = n_objects if n_objects is not None else 5 + seed % 6
        g = generate_scene(SceneConfig(scenario=scenario, n_objects=n, seed=seed, **kw))
        return cls(g.scene, g.target, g.query)

    def observe(self):
        self.last = render(self.scene, self.camera, self.size)
        return self.last.obs, self.last.mask

    def object_at(self, label):
        if self.last is None or not 1 <= label <= len(self.last.object_names):
            raise UnknownObject(f"no object with label {label} in the last observation")
        return self.last.object_names[label - 1]

    def ground_truth_id(self):
        return None if self.last is None else self.last.label_of(self.target)

    def execute(self, action):
        name = self.object_at(action.object_id)
        obj = self.scene.get(name)
        outcome = execute_grasp(self.scene, name, action.grasp.world)
        info = {"object": name, "success": outcome.success, "reason": outcome.reason}
        if outcome.success and action.kind == "remove":
            placed = place_object(self.scene, obj, self.place_region)
            info["placed_at"] = [round(p, 6) for p in placed.pose]
        return info

    def snapshot(self):
        return copy.deepcopy(self.scene)
