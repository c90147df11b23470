import json
import math

import numpy as np
import pytest
from scipy import ndimage

from owg.errors import StageError
from owg.executor import (
    ExecutorConfig,
    HeightmapGraspSource,
    MapsGraspSource,
    PrimitiveAction,
    run_trial,
    step,
)
from owg.grasping import GraspMaps
from owg.oracle import SimOracleBackend
from owg.sim import SimEnv, SimObject, SimScene
from owg.vlm import ReplayBackend, ScriptedBackend, TranscriptStore


def _box(name, length, width, height, x, y, yaw=0.0, color=(200, 60, 60)):
    fp = [(-length / 2, -width / 2), (length / 2, -width / 2), (length / 2, width / 2), (-length / 2, width / 2)]
    return SimObject(name, "box", fp, height, (x, y, yaw), color)


def _four_env(target="sponge"):
    objs = [
        _box("sponge", 0.09, 0.06, 0.03, 0.35, -0.15, 0.3, (250, 220, 120)),
        _box("block", 0.06, 0.06, 0.06, 0.65, -0.15, 0.0, (160, 110, 60)),
        _box("book", 0.20, 0.08, 0.03, 0.35, 0.15, 1.2, (60, 90, 60)),
        _box("can", 0.066, 0.066, 0.12, 0.65, 0.15, 0.0, (190, 20, 30)),
    ]
    return SimEnv(SimScene(objs), target)


CFG = ExecutorConfig(self_consistency_k=1)


def _labels(env):
    env.observe()
    return {name: env.last.label_of(name) for name in env.last.object_names}


def test_scripted_pick_with_first_grasp():
    env = _four_env()
    lab = _labels(env)
    t = lab["sponge"]
    backend = ScriptedBackend({
        "ground": f"The sponge is [{t}].\nANSWER: [{t}]",
        "plan": f"Nothing blocks it.\nANSWER: [{t}]",
        "rank": "(i) fine\n(ii) none\n(iii) ok\nANSWER: [1]",
    })
    action, rec = step(env, env.query, CFG, backend)
    assert isinstance(action, PrimitiveAction)
    assert action.kind == "pick" and action.object_id == t
    assert action.grasp.to_dict() == rec.grasps[0]
    assert rec.rank["order"][0] == 1 and rec.gt_target_id == t
    log = run_trial(_four_env(), env.query, CFG, backend)
    assert log.success and log.attempts_used == 1 and log.failed_grasps == 0
    assert len(log.steps) == 1 and log.steps[0].outcome["object"] == "sponge"


def test_scripted_plan_removes_first_id():
    env = _four_env()
    lab = _labels(env)
    t, other = lab["sponge"], lab["can"]
    backend = ScriptedBackend({
        "ground": f"ANSWER: [{t}]",
        "plan": f"[{other}] is in the way.\nANSWER: [{other}, {t}]",
        "rank": "ANSWER: [1]",
    })
    action, rec = step(env, env.query, CFG, backend)
    assert action.kind == "remove" and action.object_id == other
    assert rec.plan["sequence"] == [other, t] and rec.plan["blockers"] == [other]
    assert isinstance(action.destination, tuple)


def test_rank_unparsable_is_planning_failure_at_rank():
    env = _four_env()
    t = _labels(env)["sponge"]
    backend = ScriptedBackend({"ground": f"ANSWER: [{t}]", "plan": f"ANSWER: [{t}]", "rank": "I am not sure."})
    with pytest.raises(StageError) as info:
        step(env, env.query, CFG, backend)
    assert info.value.stage == "rank" and type(info.value).__name__ == "PlanningFailed"
    log = run_trial(_four_env(), env.query, CFG, backend)
    assert log.result == {"status": "failure", "reason": "AllSamplesUnparsable", "stage": "rank",
                          "detail": log.result["detail"]}
    assert log.steps == [] and log.attempts_used == 0


def test_grounding_out_of_range_fails_at_ground():
    env = _four_env()
    backend = ScriptedBackend({"ground": "ANSWER: [9]"})
    log = run_trial(env, env.query, CFG, backend)
    assert log.result["stage"] == "ground" and log.result["reason"] == "AllSamplesUnparsable"


def test_replay_miss_is_stage_tagged():
    env = _four_env()
    log = run_trial(env, env.query, CFG, ReplayBackend(TranscriptStore()))
    assert log.result["status"] == "failure"
    assert log.result["reason"] == "ReplayMiss" and log.result["stage"] == "ground"


def test_failed_grasps_exhaust_budget():
    env = _four_env()
    lab = _labels(env)
    t = lab["sponge"]
    # always grasp far off the object so every pick misses
    class OffTarget(HeightmapGraspSource):
        def __call__(self, obs, mask, seg_id, bounds, cfg):
            grasps = super().__call__(obs, mask, seg_id, bounds, cfg)
            return [type(g)(g.center_px, g.yaw, g.width_px, g.quality,
                            type(g.world)(g.world.x, g.world.y, g.world.z, g.world.yaw, 0.001)) for g in grasps]

    backend = ScriptedBackend({"ground": f"ANSWER: [{t}]", "plan": f"ANSWER: [{t}]", "rank": "ANSWER: [1]"})
    log = run_trial(env, env.query, CFG, backend, OffTarget())
    assert log.result["reason"] == "AttemptsExhausted"
    assert log.failed_grasps == 3 and log.attempts_used == 3 and len(log.steps) == 3
    assert all(s.outcome["reason"] == "width_exceeded" for s in log.steps)
    assert len(env.scene.objects) == 4
    budget1 = run_trial(_four_env(), env.query, ExecutorConfig(self_consistency_k=1, attempt_budget=1), backend,
                        OffTarget())
    assert budget1.failed_grasps == 1


@pytest.mark.parametrize("seed", [0, 3, 7])
def test_oracle_cluttered_removes_blocker_then_picks(seed):
    env = SimEnv.generate("cluttered", seed)
    target = env.target
    log = run_trial(env, env.query, CFG, SimOracleBackend(env))
    assert log.success, log.result
    kinds = [s.action["kind"] for s in log.steps]
    assert kinds[-1] == "pick" and "remove" in kinds
    assert target not in [o.name for o in env.scene.objects]
    json.loads(log.to_json())


def test_oracle_isolated_single_step():
    env = SimEnv.generate("isolated", 1)
    log = run_trial(env, env.query, CFG, SimOracleBackend(env))
    assert log.success and len(log.steps) == 1 and log.attempts_used == 1
    d = log.to_dict()
    assert d["schema"] == "owg.trial/1" and d["steps"][0]["ground"]["target_id"] == d["steps"][0]["gt_target_id"]


def test_no_planning_ablation_fails_on_blocker():
    env = SimEnv.generate("cluttered", 0)
    cfg = ExecutorConfig(self_consistency_k=1, planning=False)
    log = run_trial(env, env.query, cfg, SimOracleBackend(env))
    assert not log.success and log.result["reason"] == "AttemptsExhausted"
    assert all(s.action["kind"] == "pick" for s in log.steps)


def test_trial_log_json_is_deterministic():
    env = SimEnv.generate("cluttered", 4)
    b = run_trial(env, "q", CFG, SimOracleBackend(env))
    env2 = SimEnv.generate("cluttered", 4)
    c = run_trial(env2, "q", CFG, SimOracleBackend(env2))
    assert b.to_json() == c.to_json()
    assert b.success and len(b.steps) >= 2


def test_dump_dir_writes_images(tmp_path):
    env = SimEnv.generate("isolated", 2)
    cfg = ExecutorConfig(self_consistency_k=1, dump_dir=str(tmp_path))
    run_trial(env, env.query, cfg, SimOracleBackend(env))
    assert (tmp_path / "step00_marked.png").exists() and (tmp_path / "step00_crop.png").exists()


def _maps_from_mask(mask):
    q = np.zeros(mask.labels.shape)
    for i in mask.ids:
        core = ndimage.binary_erosion(mask.labels == i, iterations=2)
        q[core] = 0.6
    return GraspMaps(q, np.zeros_like(q), np.full_like(q, 30.0))


def test_maps_grasp_source_decodes_inside_matched_segment():
    env = _four_env()
    obs, mask = env.observe()
    source = MapsGraspSource(_maps_from_mask(mask))
    for seg in mask.ids:
        grasps = source(obs, mask, seg, env.bounds, CFG)
        assert grasps
        for g in grasps:
            u, v = (int(round(c)) for c in g.center_px)
            assert mask.labels[v, u] == seg
            assert math.isfinite(g.world.z)


def test_config_validation():
    with pytest.raises(ValueError):
        ExecutorConfig(attempt_budget=0)
    with pytest.raises(ValueError):
        ExecutorConfig(self_consistency_k=0)
    with pytest.raises(ValueError):
        ExecutorConfig(self_consistency_k=4)
