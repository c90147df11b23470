"""Multimodal prompt assembly for the ground, plan and rank stages."""

from __future__ import annotations

import hashlib
import io
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .errors import EmptyQuery, NoGrasps, UnknownTarget
from .imaging import encode_png, raster_digest
from .parsing import parse_final_answer

DEFAULT_TEMPLATE_DIR = os.path.join(os.path.dirname(__file__), "templates")

ANSWER_FORMATS = {
    "ground": "answer/ground:[id]",
    "plan": "answer/plan:[id,...]",
    "rank": "answer/rank:[perm]",
}


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    """An encoded image plus a digest of its decoded pixels.

    The digest, not the PNG bytes, identifies the image in cache keys, so
    keys do not depend on the compressor build.
    """

    png: bytes = field(repr=False)
    mime: str = "image/png"
    sha256: str = ""

    def __post_init__(self):
        if not self.sha256:
            raster = np.asarray(Image.open(io.BytesIO(self.png)).convert("RGB"))
            object.__setattr__(self, "sha256", raster_digest(raster))

    @classmethod
    def from_raster(cls, raster):
        raster = np.ascontiguousarray(raster)
        return cls(encode_png(raster), "image/png", raster_digest(raster))


Part = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class ChatMessage:
    role: str
    parts: Tuple[Part, ...]

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role {self.role!r}")
        if not self.parts:
            raise ValueError("a message needs at least one part")
        if self.role == "system" and any(isinstance(p, ImagePart) for p in self.parts):
            raise ValueError("system messages carry text only")

    @property
    def images(self):
        return [p for p in self.parts if isinstance(p, ImagePart)]

    @property
    def text(self):
        return "".join(p.text for p in self.parts if isinstance(p, TextPart))


@dataclass(frozen=True, eq=False)
class PromptBundle:
    messages: Tuple[ChatMessage, ...]
    stage: str
    expected_format: str
    template_hash: str
    # out-of-band data for in-process backends; never serialized or hashed
    context: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.messages or self.messages[0].role != "system":
            raise ValueError("a bundle starts with the system message")

    @property
    def live_message(self):
        return self.messages[-1]

    @property
    def image_count(self):
        return len(self.live_message.images)

    @property
    def text(self):
        return "\n".join(m.text for m in self.messages)


class Templates:
    """A directory of UTF-8 prompt templates with ``{slot}`` placeholders."""

    def __init__(self, directory=None):
        self.directory = os.path.abspath(directory or DEFAULT_TEMPLATE_DIR)
        self._files = {}
        for name in sorted(os.listdir(self.directory)):
            if name.endswith(".txt"):
                with open(os.path.join(self.directory, name), "rb") as f:
                    self._files[name[:-4]] = f.read()
        missing = {"system", "ground", "ground_noref", "plan", "rank", "answer_ground",
                   "answer_plan", "answer_rank", "rank_hint", "example"} - set(self._files)
        if missing:
            raise FileNotFoundError(f"template dir {self.directory} lacks {sorted(missing)}")
        h = hashlib.sha256()
        for name, data in self._files.items():
            h.update(name.encode() + b"\0" + data + b"\0")
        self.hash = h.hexdigest()

    def get(self, name):
        return self._files[name].decode("utf-8")

    def fill(self, name, **slots):
        # plain replacement so braces inside user text stay literal
        text = self.get(name)
        for key, value in slots.items():
            text = text.replace("{" + key + "}", str(value))
        return text.strip("\n")


@lru_cache(maxsize=None)
def _cached_templates(directory):
    return Templates(directory)


def load_templates(directory=None):
    return _cached_templates(os.path.abspath(directory or DEFAULT_TEMPLATE_DIR))


@dataclass(frozen=True)
class IcExample:
    image: bytes = field(repr=False)
    exemplar_response: str
    polarity: str
    stage: str = "plan"

    def __post_init__(self):
        if self.polarity not in ("positive", "negative"):
            raise ValueError("polarity must be positive or negative")
        parse_final_answer(self.exemplar_response, self.stage)


def _image(image):
    if isinstance(image, bytes):
        return ImagePart(image)
    return ImagePart.from_raster(np.asarray(getattr(image, "raster", image)))


def _system(t):
    return ChatMessage("system", (TextPart(t.get("system").strip()),))


def build_ground_prompt(reference, marked, user_input, templates=None, with_reference=True):
    if not user_input or not user_input.strip():
        raise EmptyQuery("grounding needs a non-empty instruction")
    if not marked.placements:
        raise UnknownTarget("marked image has no segments")
    t = templates or load_templates()
    answer = t.get("answer_ground").strip()
    if with_reference:
        text = t.fill("ground", user_input=user_input.strip(), answer_format=answer)
        images = (_image(reference), _image(marked))
    else:
        text = t.fill("ground_noref", user_input=user_input.strip(), answer_format=answer)
        images = (_image(marked),)
    user = ChatMessage("user", images + (TextPart(text),))
    return PromptBundle(
        (_system(t), user),
        "ground",
        ANSWER_FORMATS["ground"],
        t.hash,
        {"n_segments": len(marked.source_ids)},
    )


def _example_messages(t, examples):
    out = []
    for ex in examples:
        intro = TextPart(t.fill("example", polarity=ex.polarity))
        out.append(ChatMessage("user", (intro, _image(ex.image))))
        out.append(ChatMessage("assistant", (TextPart(ex.exemplar_response),)))
    return out


def build_plan_prompt(marked, target, examples: Sequence[IcExample] = (), templates=None):
    if target not in marked.source_ids:
        raise UnknownTarget(f"target {target} is not one of the marked IDs {marked.source_ids}")
    t = templates or load_templates()
    text = t.fill("plan", target=target, answer_format=t.get("answer_plan").strip())
    messages = [_system(t)] + _example_messages(t, examples)
    messages.append(ChatMessage("user", (_image(marked), TextPart(text))))
    return PromptBundle(
        tuple(messages), "plan", ANSWER_FORMATS["plan"], t.hash, {"target": target}
    )


def build_rank_prompt(marked_crop, target_category_hint: Optional[str] = None, templates=None,
                      examples: Sequence[IcExample] = ()):
    k = len(marked_crop.source_ids)
    if k < 1:
        raise NoGrasps("rank prompt needs at least one drawn grasp")
    t = templates or load_templates()
    hint = t.fill("rank_hint", hint=target_category_hint.strip()) if target_category_hint else ""
    ids = ", ".join(f"[{i}]" for i in range(1, k + 1))
    text = t.fill("rank", k=k, ids=ids, hint=hint, answer_format=t.get("answer_rank").strip())
    messages = [_system(t)] + _example_messages(t, examples)
    messages.append(ChatMessage("user", (_image(marked_crop), TextPart(text))))
    return PromptBundle(tuple(messages), "rank", ANSWER_FORMATS["rank"], t.hash, {"k": k})


def answer_instruction(stage, templates=None):
    t = templates or load_templates()
    return t.get(f"answer_{stage}").strip()


def text_templates(query, templates=None):
    if not query or not query.strip():
        raise EmptyQuery("query must be non-empty")
    t = templates or load_templates()
    q = query.strip()
    out = []
    for line in t.get("clip_templates").splitlines():
        line = line.strip()
        if line:
            s = line.replace("{q}", q)
            if s not in out:
                out.append(s)
    return out
