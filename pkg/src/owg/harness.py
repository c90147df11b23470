"""Evaluation: grounding mIoU per query type, seeded trial benchmarks with a
failure breakdown, and the embedding-based segment ranker."""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import (
    DatasetFormatError,
    DimensionMismatch,
    MissingFile,
    ParseError,
    ProviderError,
)
from .executor import ExecutorConfig, run_trial
from .imaging import load_scene, raster_digest
from .markers import VisualTransformKind, apply_transform, overlay_som
from .parsing import parse_ground
from .prompts import build_ground_prompt, load_templates, text_templates
from .sim import SimEnv
from .vlm import request_for, self_consistent

log = logging.getLogger(__name__)

QUERY_TYPES = (
    "name",
    "attribute",
    "spatial_relation",
    "visual_relation",
    "semantic_relation",
    "multi_hop",
    "affordance",
)


def iou(pred, gt):
    """Intersection over union of two binary masks as an exact fraction."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    union = int(np.count_nonzero(pred | gt))
    if union == 0:
        return Fraction(1)
    return Fraction(int(np.count_nonzero(pred & gt)), union)


# ---------------------------------------------------------------------------
# grounding evaluation


@dataclass(frozen=True)
class EvalSample:
    scene: str
    query: str
    query_type: str
    target_id: int
    gt_mask: Optional[str] = None

    def to_dict(self):
        d = {"scene": self.scene, "query": self.query, "type": self.query_type, "target_id": self.target_id}
        if self.gt_mask:
            d["gt_mask"] = self.gt_mask
        return d


def load_dataset(folder):
    """Read ``annotations.json`` and check every record against its scene."""
    path = os.path.join(folder, "annotations.json")
    if not os.path.exists(path):
        raise MissingFile(f"dataset {folder} has no annotations.json")
    try:
        with open(path, encoding="utf-8") as f:
            rows = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}: {e}") from None
    if not isinstance(rows, list):
        raise DatasetFormatError(f"{path}: expected a list of samples")
    samples = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            raise DatasetFormatError(f"sample {i}: not an object")
        for key in ("scene", "query", "type", "target_id"):
            if key not in row:
                raise DatasetFormatError(f"sample {i}: missing field {key!r}")
        if row["type"] not in QUERY_TYPES:
            raise DatasetFormatError(f"sample {i}: unknown query type {row['type']!r}")
        if not isinstance(row["target_id"], int) or isinstance(row["target_id"], bool):
            raise DatasetFormatError(f"sample {i}: target_id must be an integer")
        if not isinstance(row["query"], str) or not row["query"].strip():
            raise DatasetFormatError(f"sample {i}: query must be a non-empty string")
        samples.append(EvalSample(row["scene"], row["query"], row["type"], row["target_id"], row.get("gt_mask")))
    return samples


@dataclass
class SampleScore:
    sample: EvalSample
    iou: Fraction
    predicted_id: Optional[int]


@dataclass
class MiouReport:
    per_sample: List[SampleScore]
    per_type: Dict[str, Fraction] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    overall: Fraction = Fraction(0)
    macro: Fraction = Fraction(0)

    @classmethod
    def from_scores(cls, scores):
        sums: Dict[str, Fraction] = {}
        counts: Dict[str, int] = {}
        for s in scores:
            t = s.sample.query_type
            sums[t] = sums.get(t, Fraction(0)) + s.iou
            counts[t] = counts.get(t, 0) + 1
        per_type = {t: sums[t] / counts[t] for t in QUERY_TYPES if t in counts}
        overall = sum(sums.values(), Fraction(0)) / len(scores) if scores else Fraction(0)
        macro = sum(per_type.values(), Fraction(0)) / len(per_type) if per_type else Fraction(0)
        return cls(list(scores), per_type, {t: counts[t] for t in per_type}, overall, macro)

    def to_dict(self, ndigits=6):
        return {
            "overall": round(float(self.overall), ndigits),
            "macro": round(float(self.macro), ndigits),
            "n_samples": len(self.per_sample),
            "per_type": {t: {"miou": round(float(v), ndigits), "n": self.counts[t]} for t, v in self.per_type.items()},
            "per_sample": [
                dict(s.sample.to_dict(), iou=round(float(s.iou), ndigits), predicted_id=s.predicted_id)
                for s in self.per_sample
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def csv_rows(self):
        rows = [("query_type", "n", "miou")]
        for t, v in self.per_type.items():
            rows.append((t, self.counts[t], f"{float(v):.6f}"))
        rows.append(("overall", len(self.per_sample), f"{float(self.overall):.6f}"))
        rows.append(("macro", len(self.per_type), f"{float(self.macro):.6f}"))
        return rows


def _backend_for(backend, sample):
    # a plain callable is a per-sample factory; anything with complete() is shared
    if hasattr(backend, "complete"):
        return backend
    return backend(sample)


def _gt_mask(folder, sample, mask):
    if sample.gt_mask:
        path = os.path.join(folder, sample.gt_mask)
        if not os.path.exists(path):
            raise MissingFile(f"missing gt mask {path}")
        gt = np.asarray(Image.open(path).convert("L")) > 0
        if gt.shape != mask.shape:
            raise DatasetFormatError(f"gt mask {sample.gt_mask} has shape {gt.shape}, scene {mask.shape}")
        return gt
    return mask.member(sample.target_id)


def score_sample(folder, sample, backend, cfg):
    obs, mask = load_scene(os.path.join(folder, sample.scene))
    if sample.target_id not in mask.ids and not sample.gt_mask:
        raise DatasetFormatError(f"target {sample.target_id} is not a segment of {sample.scene}")
    gt = _gt_mask(folder, sample, mask)
    marked = overlay_som(obs, mask, cfg.marker_style(obs.shape))
    bundle = build_ground_prompt(obs.rgb, marked, sample.query, load_templates(cfg.templates_dir),
                                 cfg.with_reference)
    ids = set(mask.ids)
    req = request_for(bundle, cfg.self_consistency_k, cfg.model_name)
    try:
        vote = self_consistent(_backend_for(backend, sample), req, lambda t: parse_ground(t, ids),
                               key=lambda g: g.target_id)
    except ParseError:
        # not finding the object counts as a miss
        return SampleScore(sample, Fraction(0), None)
    pred = vote.value.target_id
    return SampleScore(sample, iou(mask.member(pred), gt), pred)


def eval_grounding(folder, backend, cfg=None, workers=4):
    """Ground every annotated query and report mIoU per query type.

    ``backend`` is either a backend shared by all samples or a callable that
    builds one per :class:`EvalSample`.
    """
    cfg = cfg or ExecutorConfig()
    samples = load_dataset(folder)
    if workers <= 1:
        scores = [score_sample(folder, s, backend, cfg) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(lambda s: score_sample(folder, s, backend, cfg), samples))
    return MiouReport.from_scores(scores)


# ---------------------------------------------------------------------------
# trial benchmark


@dataclass
class FailureBreakdown:
    successes: int = 0
    grounding_failures: int = 0
    grasping_failures: int = 0

    @property
    def total(self):
        return self.successes + self.grounding_failures + self.grasping_failures

    def to_dict(self):
        return {"successes": self.successes, "grounding_failures": self.grounding_failures,
                "grasping_failures": self.grasping_failures}


@dataclass(frozen=True)
class BenchConfig:
    scenario: str = "cluttered"
    n_trials: int = 15
    seeds: Optional[Tuple[int, ...]] = None
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)
    n_objects: Optional[int] = None

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.seeds is not None and len(self.seeds) < self.n_trials:
            raise ValueError(f"{self.n_trials} trials need as many seeds, got {len(self.seeds)}")

    def trial_seeds(self):
        return list(self.seeds[: self.n_trials]) if self.seeds is not None else list(range(self.n_trials))


@dataclass
class BenchResult:
    success_rate: float
    breakdown: FailureBreakdown
    logs: List
    seeds: List[int]

    def to_dict(self):
        return {
            "success_rate": round(self.success_rate, 6),
            "breakdown": self.breakdown.to_dict(),
            "trials": [
                {"seed": s, "result": lg.result, "steps": len(lg.steps), "attempts_used": lg.attempts_used}
                for s, lg in zip(self.seeds, self.logs)
            ],
        }


def classify_failure(log_):
    """'grounding' when any step grounded something other than the target
    (or grounding itself failed), else 'grasping'."""
    if log_.result.get("stage") == "ground":
        return "grounding"
    for s in log_.steps:
        if s.gt_target_id is not None and s.ground["target_id"] != s.gt_target_id:
            return "grounding"
    return "grasping"


def trial_succeeded(log_):
    """A trial counts as a success only if the picked object is the true target."""
    if not log_.success:
        return False
    last = log_.steps[-1]
    return last.gt_target_id is None or last.ground["target_id"] == last.gt_target_id


def run_benchmark(cfg, backend_factory: Callable, workers=1):
    """Run seeded trials; ``backend_factory(env)`` builds each trial's backend."""
    seeds = cfg.trial_seeds()

    def one(seed):
        env = SimEnv.generate(cfg.scenario, seed, cfg.n_objects)
        return run_trial(env, env.query, cfg.executor, backend_factory(env))

    if workers <= 1:
        logs = [one(s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            logs = list(pool.map(one, seeds))
    bd = FailureBreakdown()
    for lg in logs:
        if trial_succeeded(lg):
            bd.successes += 1
        elif classify_failure(lg) == "grounding":
            bd.grounding_failures += 1
        else:
            bd.grasping_failures += 1
    return BenchResult(bd.successes / len(seeds), bd, logs, seeds)


# ---------------------------------------------------------------------------
# embedding ranker


@dataclass(frozen=True)
class TransformStack:
    kinds: Tuple[VisualTransformKind, ...]
    multi_template: bool = False

    def __post_init__(self):
        if not self.kinds:
            raise ValueError("a transform stack needs at least one transform")
        object.__setattr__(self, "kinds", tuple(VisualTransformKind(k) for k in self.kinds))

    @property
    def name(self):
        s = "+".join(k.value for k in self.kinds)
        return s + ("+templates" if self.multi_template else "")


def component_matrix():
    """Every boundary x reverse x crop x multi-template combination."""
    out = []
    for boundary in (VisualTransformKind.RECTANGLE, VisualTransformKind.ELLIPSE, VisualTransformKind.CONTOUR):
        for reverse in (VisualTransformKind.BLUR_REVERSE, VisualTransformKind.GRAY_REVERSE,
                        VisualTransformKind.WHITE_BACKGROUND):
            for crop in (False, True):
                for multi in (False, True):
                    kinds = (boundary, reverse) + ((VisualTransformKind.CROP,) if crop else ())
                    out.append(TransformStack(kinds, multi))
    return out


def _unit_rows(m, what):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or not np.all(np.isfinite(m)):
        raise ProviderError(f"{what} embeddings must be a finite 2-D array")
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ProviderError(f"{what} embedding with zero norm")
    return m / norms


def segment_scores(obs, mask, query, stack, provider):
    """Mean cosine similarity per segment over stack images x text templates."""
    texts = text_templates(query) if stack.multi_template else [query.strip()]
    t = _unit_rows(provider.embed_texts(texts), "text")
    scores = {}
    for seg in mask.ids:
        images = [apply_transform(obs, mask, seg, k) for k in stack.kinds]
        v = _unit_rows(provider.embed_images(images), "image")
        if v.shape[1] != t.shape[1]:
            raise ProviderError(f"image dim {v.shape[1]} != text dim {t.shape[1]}")
        scores[seg] = float((v @ t.T).mean())
    return scores


def rank_by_embedding(obs, mask, query, stack, provider):
    scores = segment_scores(obs, mask, query, stack, provider)
    best = max(scores.values())
    return min(s for s, v in scores.items() if v == best)


class PaletteProvider:
    """Synthetic embedding provider over a fixed set of named colors.

    An image embeds as the count of pixels exactly matching each color,
    restricted to the bounding box of red marker strokes when the image has
    any (the marked region is where attention goes). A text embeds as the
    indicator of the color names it mentions. A constant extra component keeps
    every vector non-zero.
    """

    def __init__(self, colors: Dict[str, Tuple[int, int, int]], marker=(255, 0, 0), bias=0.05):
        self.names = list(colors)
        self.colors = np.asarray([colors[n] for n in self.names], dtype=np.int64)
        self.marker = np.asarray(marker, dtype=np.int64)
        self.bias = bias

    @property
    def dim(self):
        return len(self.names) + 1

    def _image(self, raster):
        a = np.asarray(raster, dtype=np.int64)
        red = np.all(a == self.marker, axis=-1)
        if red.any():
            vs, us = np.nonzero(red)
            a = a[vs.min(): vs.max() + 1, us.min(): us.max() + 1]
        flat = a.reshape(-1, 3)
        counts = np.array([np.count_nonzero(np.all(flat == c, axis=1)) for c in self.colors], dtype=float)
        total = counts.sum()
        if total:
            counts /= total
        return np.append(counts, self.bias)

    def embed_images(self, rasters):
        return np.stack([self._image(r) for r in rasters])

    def embed_texts(self, texts):
        out = []
        for text in texts:
            words = text.lower()
            vec = [1.0 if n.lower() in words else 0.0 for n in self.names]
            out.append(vec + [self.bias])
        return np.asarray(out)


class ScaledProvider:
    """Wraps a provider and multiplies every vector by a positive scalar."""

    def __init__(self, inner, image_scale=1.0, text_scale=1.0):
        self.inner = inner
        self.image_scale = image_scale
        self.text_scale = text_scale

    def embed_images(self, rasters):
        return np.asarray(self.inner.embed_images(rasters)) * self.image_scale

    def embed_texts(self, texts):
        return np.asarray(self.inner.embed_texts(texts)) * self.text_scale


def write_vectors(path, image_vectors: Dict[str, Sequence[float]], text_vectors: Dict[str, Sequence[float]]):
    """Vectors file: one JSON header line, then a float32 little-endian
    matrix with image rows first and text rows after."""
    keys_i, keys_t = list(image_vectors), list(text_vectors)
    rows = [image_vectors[k] for k in keys_i] + [text_vectors[k] for k in keys_t]
    m = np.asarray(rows, dtype="<f4")
    if m.ndim != 2:
        raise ProviderError("all vectors must share one dimension")
    header = {"dim": int(m.shape[1]), "images": keys_i, "texts": keys_t}
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8") + b"\n")
        f.write(m.tobytes())


class FileProvider:
    """Precomputed vectors keyed by image raster digest and by text."""

    def __init__(self, path):
        if not os.path.exists(path):
            raise MissingFile(f"missing vectors file {path}")
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode("utf-8"))
            data = f.read()
        dim = int(header["dim"])
        keys_i, keys_t = header["images"], header["texts"]
        n = len(keys_i) + len(keys_t)
        if len(data) != n * dim * 4:
            raise ProviderError(f"{path}: expected {n}x{dim} float32 matrix, got {len(data)} bytes")
        m = np.frombuffer(data, dtype="<f4").reshape(n, dim).astype(np.float64)
        self.images = dict(zip(keys_i, m[: len(keys_i)]))
        self.texts = dict(zip(keys_t, m[len(keys_i):]))

    def embed_images(self, rasters):
        out = []
        for r in rasters:
            key = raster_digest(r)
            if key not in self.images:
                raise ProviderError(f"no precomputed vector for image {key[:12]}")
            out.append(self.images[key])
        return np.asarray(out)

    def embed_texts(self, texts):
        missing = [t for t in texts if t not in self.texts]
        if missing:
            raise ProviderError(f"no precomputed vector for text {missing[0]!r}")
        return np.asarray([self.texts[t] for t in texts])
