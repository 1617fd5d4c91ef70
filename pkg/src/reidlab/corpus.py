"""Corpus ingestion, quality filtering, and stage resolution policies.

A corpus is loaded from a newline-delimited manifest (one JSON object per
line) into an immutable :class:`CorpusIndex`. All downstream sampling and
evaluation works off this index; it is safe to share across threads.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Protocol

MODALITIES = ("visible", "infrared")
QUALITY_FLAGS = ("low_resolution", "occluded")

# Attribute vocabulary of the stage-1 captioning prompt. Fragment queries,
# profile diffs, and the console's chips all share this field list.
ATTRIBUTE_FIELDS = (
    "gender",
    "age_range",
    "hair",
    "clothing_type",
    "clothing_color",
    "footwear_type",
    "footwear_color",
    "posture_gait",
    "patterns_accessories",
    "distinguishing_features",
)

# Default quality gate (height x width = 64 x 32); configurable per corpus.
DEFAULT_MIN_WIDTH = 32
DEFAULT_MIN_HEIGHT = 64

# Per-stage resolution targets as (width, height). Stage 1 upsizes anything
# smaller, stage 2 downsizes anything larger, stage 3 leaves inputs alone.
STAGE1_TARGET = (128, 256)
STAGE2_TARGET = (192, 384)


class CorpusError(Exception):
    """Base class for corpus-level failures."""


class ManifestParseError(CorpusError):
    """A manifest line could not be parsed or validated."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"manifest line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class ManifestConflictError(CorpusError):
    """Two manifest lines share the same image_id."""

    def __init__(self, image_id: str, line_no: int):
        super().__init__(f"duplicate image_id {image_id!r} at manifest line {line_no}")
        self.image_id = image_id
        self.line_no = line_no


class EmptyCorpusError(CorpusError):
    """The manifest yielded zero valid records."""


class AnnotationError(CorpusError):
    """Attribute annotation failed for a subset of images."""

    def __init__(self, failed_ids: list[str]):
        super().__init__(f"annotation failed for {len(failed_ids)} image(s): {', '.join(failed_ids)}")
        self.failed_ids = list(failed_ids)


@dataclass(frozen=True)
class ImageRecord:
    """One pedestrian image plus its identity/camera/modality metadata."""

    image_id: str
    dataset_id: str
    identity_id: str
    camera_id: str
    modality: str
    width: int
    height: int
    uri: str
    clothing_state_id: str | None = None
    quality_flags: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if not self.identity_id:
            raise ValueError("identity_id must be non-empty")
        if not self.camera_id:
            raise ValueError("camera_id must be non-empty")
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")
        unknown = set(self.quality_flags) - set(QUALITY_FLAGS)
        if unknown:
            raise ValueError(f"unknown quality flags: {sorted(unknown)}")

    @property
    def occluded(self) -> bool:
        return "occluded" in self.quality_flags

    def to_dict(self) -> dict:
        out = {
            "image_id": self.image_id,
            "dataset_id": self.dataset_id,
            "identity_id": self.identity_id,
            "camera_id": self.camera_id,
            "modality": self.modality,
            "width": self.width,
            "height": self.height,
            "uri": self.uri,
        }
        if self.clothing_state_id is not None:
            out["clothing_state_id"] = self.clothing_state_id
        if self.quality_flags:
            out["quality_flags"] = sorted(self.quality_flags)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> ImageRecord:
        required = ("image_id", "dataset_id", "identity_id", "camera_id", "modality", "width", "height", "uri")
        missing = [k for k in required if k not in data]
        if missing:
            raise ValueError(f"missing required field(s): {', '.join(missing)}")
        width, height = data["width"], data["height"]
        if not isinstance(width, int) or not isinstance(height, int) or isinstance(width, bool) or isinstance(height, bool):
            raise ValueError("width and height must be integers")
        return cls(
            image_id=str(data["image_id"]),
            dataset_id=str(data["dataset_id"]),
            identity_id=str(data["identity_id"]),
            camera_id=str(data["camera_id"]),
            modality=str(data["modality"]),
            width=width,
            height=height,
            uri=str(data["uri"]),
            clothing_state_id=None if data.get("clothing_state_id") is None else str(data["clothing_state_id"]),
            quality_flags=frozenset(data.get("quality_flags", ())),
        )


@dataclass(frozen=True)
class AttributeProfile:
    """Per-image pedestrian attributes extracted by a captioner.

    ``occluded`` records that the captioner could not recognize the
    pedestrian's clothing; such profiles never carry a clothing_type.
    """

    gender: str | None = None
    age_range: str | None = None
    hair: str | None = None
    clothing_type: str | None = None
    clothing_color: str | None = None
    footwear_type: str | None = None
    footwear_color: str | None = None
    posture_gait: str | None = None
    patterns_accessories: str | None = None
    distinguishing_features: str | None = None
    occluded: bool = False
    caption: str | None = None

    def __post_init__(self):
        if self.occluded and self.clothing_type is not None:
            raise ValueError("occluded profiles cannot carry a clothing_type")

    def populated(self) -> dict[str, str]:
        """Attribute fields that are present, in canonical field order."""
        out = {}
        for name in ATTRIBUTE_FIELDS:
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    def matches_fragment(self, fragment: dict) -> bool:
        """True when every field of the fragment is present and equal here."""
        for name, value in fragment.items():
            if name not in ATTRIBUTE_FIELDS:
                return False
            if getattr(self, name) != value:
                return False
        return True

    def to_dict(self) -> dict:
        out: dict = dict(self.populated())
        if self.occluded:
            out["occluded"] = True
        if self.caption is not None:
            out["caption"] = self.caption
        return out

    @classmethod
    def from_dict(cls, data: dict) -> AttributeProfile:
        kwargs = {k: data[k] for k in ATTRIBUTE_FIELDS if data.get(k) is not None}
        return cls(
            occluded=bool(data.get("occluded", False)),
            caption=data.get("caption"),
            **kwargs,
        )


@dataclass
class CorpusStats:
    """Per-dataset record counts plus a cumulative removal counter."""

    per_dataset: dict[str, int] = field(default_factory=dict)
    total: int = 0
    removed: int = 0


@dataclass
class CorpusIndex:
    """Indexed view over a set of ImageRecords. Treat as immutable."""

    records: dict[str, ImageRecord]
    by_identity: dict[str, list[str]]
    by_camera: dict[str, list[str]]
    attributes: dict[str, AttributeProfile]
    stats: CorpusStats

    @classmethod
    def build(
        cls,
        records: Iterable[ImageRecord],
        attributes: dict[str, AttributeProfile] | None = None,
        removed: int = 0,
    ) -> CorpusIndex:
        by_id: dict[str, ImageRecord] = {}
        for rec in records:
            if rec.image_id in by_id:
                raise ManifestConflictError(rec.image_id, line_no=-1)
            by_id[rec.image_id] = rec
        by_identity: dict[str, list[str]] = {}
        by_camera: dict[str, list[str]] = {}
        per_dataset: dict[str, int] = {}
        for image_id in sorted(by_id):
            rec = by_id[image_id]
            by_identity.setdefault(rec.identity_id, []).append(image_id)
            by_camera.setdefault(rec.camera_id, []).append(image_id)
            per_dataset[rec.dataset_id] = per_dataset.get(rec.dataset_id, 0) + 1
        attrs = {k: v for k, v in (attributes or {}).items() if k in by_id}
        stats = CorpusStats(per_dataset=per_dataset, total=len(by_id), removed=removed)
        return cls(records=by_id, by_identity=by_identity, by_camera=by_camera, attributes=attrs, stats=stats)

    def identities(self) -> list[str]:
        return sorted(self.by_identity)

    def image_ids(self) -> list[str]:
        return sorted(self.records)

    def caption_of(self, image_id: str) -> str | None:
        profile = self.attributes.get(image_id)
        return profile.caption if profile else None

    def identity_of(self, image_id: str) -> str:
        return self.records[image_id].identity_id


class Captioner(Protocol):
    """Anything that can turn an image record into an AttributeProfile."""

    def caption(self, record: ImageRecord) -> AttributeProfile: ...


def _iter_lines(source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            yield from fh
        return
    if hasattr(source, "read"):
        for line in source:
            yield line.decode("utf-8") if isinstance(line, bytes) else line
        return
    for line in source:
        yield line.decode("utf-8") if isinstance(line, bytes) else line


def parse_manifest(source: str | Path | IO | Iterable[str | bytes]) -> CorpusIndex:
    """Parse a newline-delimited manifest into a CorpusIndex.

    Any malformed line raises :class:`ManifestParseError` carrying its
    1-based line number; duplicate image ids raise
    :class:`ManifestConflictError`; an input with zero records raises
    :class:`EmptyCorpusError`.
    """
    records: dict[str, ImageRecord] = {}
    attributes: dict[str, AttributeProfile] = {}
    for line_no, raw in enumerate(_iter_lines(source), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(line_no, f"invalid JSON ({exc.msg})") from exc
        if not isinstance(data, dict):
            raise ManifestParseError(line_no, "record must be a JSON object")
        try:
            rec = ImageRecord.from_dict(data)
        except ValueError as exc:
            raise ManifestParseError(line_no, str(exc)) from exc
        if rec.image_id in records:
            raise ManifestConflictError(rec.image_id, line_no)
        records[rec.image_id] = rec
        if "attributes" in data:
            attributes[rec.image_id] = AttributeProfile.from_dict(data["attributes"])
    if not records:
        raise EmptyCorpusError("manifest contains no records")
    return CorpusIndex.build(records.values(), attributes=attributes)


def serialize_manifest(index: CorpusIndex) -> Iterator[str]:
    """Yield manifest lines for an index, sorted by image_id."""
    for image_id in index.image_ids():
        data = index.records[image_id].to_dict()
        profile = index.attributes.get(image_id)
        if profile is not None:
            data["attributes"] = profile.to_dict()
        yield json.dumps(data, sort_keys=True, ensure_ascii=False)


def write_manifest(index: CorpusIndex, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in serialize_manifest(index):
            fh.write(line + "\n")


def filter_by_quality(
    index: CorpusIndex,
    min_width: int = DEFAULT_MIN_WIDTH,
    min_height: int = DEFAULT_MIN_HEIGHT,
) -> CorpusIndex:
    """Drop records smaller than the thresholds (inclusive boundaries kept).

    The removal count accumulates in ``stats.removed`` so repeated
    application with the same thresholds is a no-op.
    """
    if min_width <= 0 or min_height <= 0:
        raise ValueError("quality thresholds must be positive")
    kept = [r for r in index.records.values() if r.width >= min_width and r.height >= min_height]
    removed = index.stats.total - len(kept)
    return CorpusIndex.build(kept, attributes=index.attributes, removed=index.stats.removed + removed)


def mark_occlusions(index: CorpusIndex, captioner: Captioner, max_workers: int = 4) -> CorpusIndex:
    """Annotate every record and flag the ones without recognizable clothing.

    Issues at most ``max_workers`` concurrent captioner requests; results
    merge in image_id order so the output is deterministic. If any request
    fails, raises :class:`AnnotationError` listing the unprocessed ids.
    """
    ordered_ids = index.image_ids()
    profiles: dict[str, AttributeProfile] = {}
    failed: list[str] = []
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        futures = {image_id: pool.submit(captioner.caption, index.records[image_id]) for image_id in ordered_ids}
        for image_id in ordered_ids:
            try:
                profiles[image_id] = futures[image_id].result()
            except Exception:
                failed.append(image_id)
    if failed:
        raise AnnotationError(failed)

    new_records = []
    for image_id in ordered_ids:
        rec = index.records[image_id]
        profile = profiles[image_id]
        if profile.occluded or profile.clothing_type is None:
            rec = replace(rec, quality_flags=rec.quality_flags | {"occluded"})
        new_records.append(rec)
    merged = dict(index.attributes)
    merged.update(profiles)
    return CorpusIndex.build(new_records, attributes=merged, removed=index.stats.removed)


def resize_policy(stage: int, width: int, height: int) -> tuple[int, int]:
    """Target (width, height) for an image under the given tuning stage.

    Stage 1 resizes anything below 256x128 (either dimension deficient)
    up to exactly 256x128; stage 2 resizes anything above 384x192 down to
    exactly 384x192; stage 3 keeps the input resolution. Targets are
    height x width; this function takes and returns (width, height).
    """
    if width <= 0 or height <= 0:
        raise ValueError("dimensions must be positive")
    if stage == 1:
        tw, th = STAGE1_TARGET
        if width < tw or height < th:
            return (tw, th)
        return (width, height)
    if stage == 2:
        tw, th = STAGE2_TARGET
        if width > tw or height > th:
            return (tw, th)
        return (width, height)
    if stage == 3:
        return (width, height)
    raise ValueError(f"unknown stage {stage!r}")
