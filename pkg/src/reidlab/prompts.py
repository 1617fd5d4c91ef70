"""Prompt template registry and answer-label helpers.

Templates are plain-text files shipped with the package; every emitted
prompt is a template with its named slots filled, nothing else, so golden
tests can check byte fidelity. Images are positional: each ``<image>``
marker corresponds to one entry of a sample's image_refs, in order.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

from .corpus import ATTRIBUTE_FIELDS

IMAGE_MARKER = "<image>"

TEMPLATE_FILES = {
    "caption": "stage1_caption.txt",
    "i2i_pair": "i2i_pair.txt",
    "i2i_gallery": "i2i_gallery.txt",
    "t2i_pair": "t2i_pair.txt",
    "t2i_many2one": "t2i_many2one.txt",
    "t2i_one2many": "t2i_one2many.txt",
    "attr_compare": "attr_compare.txt",
    "attr_annotate": "attr_annotate.txt",
    "reid_standard": "reid_standard.txt",
    "reid_cc": "reid_cc.txt",
    "reid_vi": "reid_vi.txt",
    "reid_t2i": "reid_t2i.txt",
    "attr_retrieval": "attr_retrieval.txt",
    "judge_pair": "judge_pair.txt",
    "choose_best": "choose_best.txt",
    "confidence_suffix": "confidence_suffix.txt",
    "adaptive_mm": "adaptive_mm.txt",
}

# Human-readable labels used in answers and serialized attribute fragments.
FIELD_LABELS = {
    "gender": "gender",
    "age_range": "age range",
    "hair": "hair",
    "clothing_type": "clothing type",
    "clothing_color": "clothing color",
    "footwear_type": "footwear type",
    "footwear_color": "footwear color",
    "posture_gait": "posture or gait",
    "patterns_accessories": "patterns or accessories",
    "distinguishing_features": "distinguishing features",
}

_LABEL_RE = re.compile(r"(?:image|description)\s*#?\s*(\d+)", re.IGNORECASE)


@lru_cache(maxsize=None)
def template_version() -> str:
    return resources.files("reidlab.templates").joinpath("VERSION").read_text(encoding="utf-8").strip()


@lru_cache(maxsize=None)
def load_template(kind: str) -> str:
    try:
        filename = TEMPLATE_FILES[kind]
    except KeyError:
        raise KeyError(f"no template registered for {kind!r}") from None
    text = resources.files("reidlab.templates").joinpath(filename).read_text(encoding="utf-8")
    return text[:-1] if text.endswith("\n") else text


def render(kind: str, **slots) -> str:
    """Fill a registered template's named slots."""
    return load_template(kind).format(**slots)


def gallery_block(count: int, start: int = 1) -> str:
    """Numbered image lines, one marker per gallery position."""
    return "\n".join(f"Image {start + i}: {IMAGE_MARKER}" for i in range(count))


def options_block(texts: list[str], start: int = 1) -> str:
    """Numbered description options for many-to-one retrieval."""
    return "\n".join(f"Description {start + i}: {text}" for i, text in enumerate(texts))


def image_label(position: int) -> str:
    """1-based answer label for a gallery position."""
    return f"Image {position}"


def description_label(position: int) -> str:
    return f"Description {position}"


def labels_answer(positions: list[int]) -> str:
    """Canonical answer string naming gallery positions in ascending order."""
    return ", ".join(image_label(p) for p in sorted(positions))


def parse_label_positions(text: str) -> list[int]:
    """Extract 1-based label positions from an answer string."""
    return [int(m.group(1)) for m in _LABEL_RE.finditer(text)]


def serialize_attributes(fragment: dict) -> str:
    """Fixed serialization of an attribute fragment, canonical field order."""
    parts = []
    for name in ATTRIBUTE_FIELDS:
        if name in fragment and fragment[name] is not None:
            parts.append(f"{FIELD_LABELS[name]}: {fragment[name]}")
    return "; ".join(parts)
