"""Closed-loop grasping: observe, mark, ground, plan, generate grasps, rank,
execute, re-observe."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .errors import (
    AllSamplesUnparsable,
    BackendError,
    DataError,
    GroundingFailed,
    NoViableGrasp,
    ParseError,
    PlanningFailed,
    StageError,
)
from .grasping import (
    DEFAULT_K,
    GraspMaps,
    DEFAULT_MIN_QUALITY,
    DEFAULT_NMS_RADIUS,
    decode_grasps,
    grasp_to_world,
    group_grasp_regions,
    match_regions,
    synthesize_antipodal,
    world_to_pixel,
)
from .imaging import deproject, encode_png, mask_rgbd, orthographic_heightmap, raster_digest, segment_stats
from .markers import MarkerStyle, crop_roi, draw_grasp_markers, overlay_som
from .parsing import parse_ground, parse_plan, parse_rank
from .prompts import build_ground_prompt, build_plan_prompt, build_rank_prompt, load_templates
from .vlm import DEFAULT_MODEL, DEFAULT_SAMPLES, request_for, self_consistent

log = logging.getLogger(__name__)

TRIAL_SCHEMA = "owg.trial/1"
PICK = "pick"
REMOVE = "remove"


@dataclass(frozen=True)
class ExecutorConfig:
    attempt_budget: int = 3
    self_consistency_k: int = DEFAULT_SAMPLES
    model_name: str = DEFAULT_MODEL
    templates_dir: Optional[str] = None
    # marker ablations
    with_reference: bool = True
    overlay_ids: bool = True
    fill: bool = True
    boxes: bool = False
    highres: bool = True
    # pipeline ablations
    planning: bool = True
    ranking: bool = True
    # grasp generation
    k_grasps: int = DEFAULT_K
    nms_radius: float = DEFAULT_NMS_RADIUS
    min_quality: float = DEFAULT_MIN_QUALITY
    heightmap_resolution: float = 0.005
    crop_margin: float = 0.2
    crop_min_side: int = 48
    crop_long_side: int = 512
    max_steps: int = 12
    dump_dir: Optional[str] = None

    def __post_init__(self):
        if self.attempt_budget < 1:
            raise ValueError("attempt_budget must be >= 1")
        if self.self_consistency_k < 1 or self.self_consistency_k % 2 == 0:
            raise ValueError("self_consistency_k must be odd and >= 1 so the vote can be decided")

    def marker_style(self, shape):
        style = MarkerStyle.for_image(shape)
        if not self.overlay_ids:
            style = style.without("ids")
        if not self.fill:
            style = style.without("fill")
        if self.boxes:
            style = style.without("boxes")
        if not self.highres:
            style = style.without("highres")
        return style


@dataclass(frozen=True)
class PrimitiveAction:
    kind: str  # "pick" | "remove"
    object_id: int
    grasp: Any
    destination: Any = "container"

    def __post_init__(self):
        if self.kind not in (PICK, REMOVE):
            raise ValueError(f"bad action kind {self.kind!r}")

    def to_dict(self):
        dest = self.destination
        return {
            "kind": self.kind,
            "object_id": self.object_id,
            "destination": list(dest) if isinstance(dest, tuple) else dest,
            "grasp": self.grasp.to_dict(),
        }


@dataclass
class StepRecord:
    t: int
    observation: str
    marked_image: str
    n_segments: int
    ground: Dict[str, Any]
    plan: Dict[str, Any]
    grasps: List[Dict[str, Any]]
    rank: Optional[Dict[str, Any]]
    action: Dict[str, Any]
    gt_target_id: Optional[int] = None
    outcome: Optional[Dict[str, Any]] = None

    def to_dict(self):
        return {
            "t": self.t,
            "observation": self.observation,
            "marked_image": self.marked_image,
            "n_segments": self.n_segments,
            "gt_target_id": self.gt_target_id,
            "ground": self.ground,
            "plan": self.plan,
            "grasps": self.grasps,
            "rank": self.rank,
            "action": self.action,
            "outcome": self.outcome,
        }


@dataclass
class TrialLog:
    query: str
    steps: List[StepRecord] = field(default_factory=list)
    attempts_used: int = 0
    failed_grasps: int = 0
    result: Dict[str, Any] = field(default_factory=lambda: {"status": "running"})

    @property
    def success(self):
        return self.result.get("status") == "success"

    def to_dict(self):
        return {
            "schema": TRIAL_SCHEMA,
            "query": self.query,
            "attempts_used": self.attempts_used,
            "failed_grasps": self.failed_grasps,
            "result": self.result,
            "steps": [s.to_dict() for s in self.steps],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


class HeightmapGraspSource:
    """Grasps for one segment: mask the RGB-D frame to the segment, project it
    to a heightmap, synthesize antipodal grasp maps and decode them."""

    def __call__(self, obs, mask, seg_id, bounds, cfg):
        masked = mask_rgbd(obs, mask, seg_id)
        hm = orthographic_heightmap(masked, bounds, cfg.heightmap_resolution)
        maps = synthesize_antipodal(hm, hm.cells > 0.005)
        grasps = decode_grasps(maps, cfg.k_grasps, cfg.nms_radius, cfg.min_quality)
        return [world_to_pixel(grasp_to_world(g, hm=hm).world, obs.camera, g.quality) for g in grasps]


class MapsGraspSource:
    """Grasps from precomputed camera-frame grasp maps covering the whole scene.

    Quality components are matched to segments by Hungarian assignment on 3-D
    centers; grasps are decoded inside the component matched to the segment.
    """

    def __init__(self, maps):
        self.maps = maps

    def __call__(self, obs, mask, seg_id, bounds, cfg):
        comp, cents = group_grasp_regions(self.maps, cfg.min_quality)
        centers = []
        keep = []
        for i, (u, v) in enumerate(cents):
            member = comp == i + 1
            depth = obs.depth[member & obs.valid_depth()]
            if depth.size:
                centers.append(obs.camera.to_world(deproject(u, v, float(np.median(depth)), obs.camera)))
                keep.append(i + 1)
        stats = [s for s in segment_stats(mask, obs) if s.world_centroid is not None]
        match = match_regions(stats, centers)
        if seg_id not in match.pairs:
            raise NoViableGrasp(f"no grasp region matched to segment {seg_id}")
        region = comp == keep[match.pairs[seg_id]]
        sub = GraspMaps(np.where(region, self.maps.quality, 0.0), self.maps.angle, self.maps.width)
        grasps = decode_grasps(sub, cfg.k_grasps, cfg.nms_radius, cfg.min_quality)
        return [grasp_to_world(g, obs=obs) for g in grasps]


def _ground_dict(vote):
    g = vote.value
    return {
        "target_id": g.target_id,
        "mentioned_ids": list(g.mentioned_ids),
        "votes": [None if p is None else p.target_id for p in vote.parses],
    }


def _stage(stage, exc_type, fn):
    try:
        return fn()
    except StageError:
        raise
    except (AllSamplesUnparsable, ParseError, BackendError, DataError) as e:
        raise exc_type(stage, f"{type(e).__name__}: {e}", e) from e


def step(env, query, cfg, backend, t=0, grasp_source=None):
    """One pass of the loop; returns the chosen action and its step record."""
    grasp_source = grasp_source or HeightmapGraspSource()
    templates = load_templates(cfg.templates_dir)
    obs, mask = env.observe()
    gt = env.ground_truth_id() if hasattr(env, "ground_truth_id") else None
    if mask.n == 0:
        raise GroundingFailed("ground", "observation has no segments")
    style = cfg.marker_style(obs.shape)
    marked = overlay_som(obs, mask, style)
    k = cfg.self_consistency_k
    ids = set(mask.ids)

    def ground():
        bundle = build_ground_prompt(obs.rgb, marked, query, templates, cfg.with_reference)
        return self_consistent(backend, request_for(bundle, k, cfg.model_name),
                               lambda text: parse_ground(text, ids), key=lambda g: g.target_id)

    g_vote = _stage("ground", GroundingFailed, ground)
    target = g_vote.value.target_id

    if cfg.planning:
        def plan():
            bundle = build_plan_prompt(marked, target, templates=templates)
            return self_consistent(backend, request_for(bundle, k, cfg.model_name),
                                   lambda text: parse_plan(text, target, ids), key=lambda p: tuple(p.sequence))

        p_vote = _stage("plan", PlanningFailed, plan)
        sequence = list(p_vote.value.sequence)
        plan_rec = {"sequence": sequence, "blockers": sorted(p_vote.value.blockers),
                    "votes": [None if p is None else list(p.sequence) for p in p_vote.parses]}
    else:
        sequence = [target]
        plan_rec = {"sequence": sequence, "blockers": [], "votes": None}
    next_id = sequence[0]

    def grasps_for():
        return grasp_source(obs, mask, next_id, env.bounds, cfg)

    try:
        grasps = _stage("grasp", PlanningFailed, grasps_for)
    except PlanningFailed as e:
        if isinstance(e.cause, NoViableGrasp):
            raise StageError("grasp", f"NoViableGrasp: {e.cause}", e.cause) from e
        raise
    crop = crop_roi(obs, mask, next_id, cfg.crop_margin, cfg.crop_min_side)
    inside = []
    for g in grasps:
        du, dv = g.center_px[0] - crop.offset[0], g.center_px[1] - crop.offset[1]
        if -0.5 <= du < crop.size[0] - 0.5 and -0.5 <= dv < crop.size[1] - 0.5:
            inside.append(g)
    if not inside:
        raise StageError("grasp", "NoViableGrasp: no grasp inside the target crop")
    grasps = inside

    rank_rec = None
    if cfg.ranking:
        up = max(1, -(-cfg.crop_long_side // max(crop.size)))
        crop_style = MarkerStyle(upscale=up if cfg.highres else 1, label_px=style.label_px)
        marked_crop = draw_grasp_markers(crop, grasps, crop_style)
        kk = len(grasps)

        def rank():
            bundle = build_rank_prompt(marked_crop, templates=templates)
            bundle.context.update({"object_id": next_id, "grasps": [g.world for g in grasps]})
            return self_consistent(backend, request_for(bundle, k, cfg.model_name),
                                   lambda text: parse_rank(text, kk), key=lambda r: tuple(r.order))

        r_vote = _stage("rank", PlanningFailed, rank)
        order = list(r_vote.value.order)
        rank_rec = {"order": order, "contact_flagged": sorted(r_vote.value.contact_flagged),
                    "votes": [None if p is None else list(p.order) for p in r_vote.parses]}
        if cfg.dump_dir:
            _dump(cfg.dump_dir, f"step{t:02d}_crop.png", marked_crop.raster)
    else:
        order = list(range(1, len(grasps) + 1))
    chosen = grasps[order[0] - 1]

    if next_id == target:
        action = PrimitiveAction(PICK, next_id, chosen, "container")
    else:
        action = PrimitiveAction(REMOVE, next_id, chosen, tuple(getattr(env, "place_region", ())) or "free_space")
    if cfg.dump_dir:
        _dump(cfg.dump_dir, f"step{t:02d}_marked.png", marked.raster)
    record = StepRecord(
        t=t,
        observation=raster_digest(obs.rgb),
        marked_image=raster_digest(marked.raster),
        n_segments=mask.n,
        ground=_ground_dict(g_vote),
        plan=plan_rec,
        grasps=[g.to_dict() for g in grasps],
        rank=rank_rec,
        action=action.to_dict(),
        gt_target_id=gt,
    )
    return action, record


def _dump(folder, name, raster):
    os.makedirs(folder, exist_ok=True)
    with open(os.path.join(folder, name), "wb") as f:
        f.write(encode_png(raster))


def run_trial(env, query, cfg, backend, grasp_source=None):
    """Loop until the grounded target is picked, a stage fails, or the
    failed-grasp budget is spent. Never raises for pipeline failures."""
    log_ = TrialLog(query)
    for t in range(cfg.max_steps):
        try:
            action, rec = step(env, query, cfg, backend, t, grasp_source)
        except StageError as e:
            log_.result = {"status": "failure", "reason": type(e.cause or e).__name__, "stage": e.stage,
                           "detail": str(e)}
            return log_
        outcome = env.execute(action)
        rec.outcome = outcome
        log_.steps.append(rec)
        if action.kind == PICK:
            log_.attempts_used += 1
        if not outcome["success"]:
            log_.failed_grasps += 1
            if action.kind == REMOVE:
                log_.attempts_used += 1
            if log_.failed_grasps >= cfg.attempt_budget:
                log_.result = {"status": "failure", "reason": "AttemptsExhausted", "stage": "execute"}
                return log_
            continue
        if action.kind == PICK:
            log_.result = {"status": "success"}
            return log_
    log_.result = {"status": "failure", "reason": "StepLimit", "stage": "execute"}
    return log_
