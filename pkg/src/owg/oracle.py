"""Ground-truth backend for the simulator.

``SimOracleBackend`` answers every stage from the simulator state instead of a
model: grounding returns the label of the target object, planning lists the
tall neighbours that would collide with the fingers, and ranking simulates
each candidate grasp. Responses are written in the same chain-of-thought
format a model is asked to produce, so they run through the normal parsers
and can be recorded into replay transcripts.

Individual stages can be sabotaged to produce plausible wrong answers, which
is how the failure-attribution paths get exercised.
"""

from __future__ import annotations

from .errors import MalformedRemoteResponse
from .sim import blocking_neighbours, judge_grasp
from .vlm import ChatResponse

STAGES = ("ground", "plan", "rank")


def _ids(ids):
    return ", ".join(str(i) for i in ids)


class SimOracleBackend:
    backend_id = "oracle"
    supports_n = True

    def __init__(self, env, sabotage=()):
        bad = set(sabotage) - set(STAGES)
        if bad:
            raise ValueError(f"unknown stages to sabotage: {sorted(bad)}")
        self.env = env
        self.sabotage = frozenset(sabotage)

    def complete(self, req):
        stage = req.bundle.stage
        ctx = req.bundle.context
        if stage == "ground":
            text = self._ground(ctx)
        elif stage == "plan":
            text = self._plan(ctx)
        elif stage == "rank":
            text = self._rank(ctx)
        else:
            raise MalformedRemoteResponse(f"oracle cannot answer stage {stage!r}")
        return ChatResponse([text] * req.n_samples, self.backend_id, 0)

    def _ground(self, ctx):
        gt = self.env.ground_truth_id()
        n = ctx.get("n_segments")
        if gt is None or n is None:
            raise MalformedRemoteResponse("oracle needs a rendered observation to ground")
        name = self.env.target
        if "ground" in self.sabotage:
            pick = gt % n + 1
            return (f"1. The instruction asks for a {name}.\n"
                    f"2. The segment marked [{pick}] looks most like it.\n"
                    f"3. The object of interest is [{pick}].\n"
                    f"ANSWER: [{pick}]")
        return (f"1. The instruction asks for the {name}; there are no intermediate objects.\n"
                f"2. In the reference image the {name} sits where the marked image shows ID [{gt}].\n"
                f"3. The object of interest is [{gt}].\n"
                f"ANSWER: [{gt}]")

    def _plan(self, ctx):
        target = ctx["target"]
        name = self.env.object_at(target)
        labels = []
        if "plan" not in self.sabotage:
            for other in blocking_neighbours(self.env.scene, name):
                label = self.env.last.label_of(other)
                if label is not None:
                    labels.append(label)
        labels.sort()
        if labels:
            mention = ", ".join(f"[{i}]" for i in labels)
            reason = (f"Objects {mention} stand right next to object {target} and are taller than it, "
                      f"so the gripper fingers would hit them. They must be removed first.")
        else:
            reason = f"No object touches object {target} closely enough to block the gripper."
        return f"{reason}\nPlan: remove the blockers, then pick {target}.\nANSWER: [{_ids(labels + [target])}]"

    def _rank(self, ctx):
        grasps = ctx.get("grasps")
        label = ctx.get("object_id")
        if grasps is None or label is None:
            raise MalformedRemoteResponse("oracle rank needs the candidate grasps in context")
        name = self.env.object_at(label)
        outcomes = [judge_grasp(self.env.scene, name, g) for g in grasps]
        good = [i for i, o in enumerate(outcomes, 1) if o.success]
        contact = [i for i, o in enumerate(outcomes, 1) if o.reason == "collision"]
        other = [i for i, o in enumerate(outcomes, 1) if not o.success and o.reason != "collision"]
        order = good + other + contact
        if "rank" in self.sabotage:
            order = order[::-1]
        flagged = ", ".join(f"[{i}]" for i in contact) if contact else "none"
        return (f"(i) The target is the {name}; a good grasp closes across its narrow side near the middle.\n"
                f"(ii) Grasps likely to touch neighbouring objects: {flagged}.\n"
                f"(iii) Ranking by stability and clearance.\n"
                f"ANSWER: [{_ids(order)}]")
