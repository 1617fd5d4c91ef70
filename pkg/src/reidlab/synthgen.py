"""Instruction dataset synthesis for the three tuning stages.

Every sample is a pure function of (seed, ordinal): builds are byte-identical
across reruns and decompose trivially for parallel generation. Gallery sizes
follow a uniform law on [a, b]; per-gallery match counts follow the inverse
transform law P(n=k) proportional to 1/(k-1) on {2..N}, normalized by the
harmonic sum H(N-1).
"""

from __future__ import annotations

import hashlib
import json
import random
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path

from . import prompts
from .corpus import CorpusIndex

TASK_KINDS = (
    "caption",
    "i2i_pair",
    "i2i_gallery",
    "t2i_pair",
    "t2i_many2one",
    "t2i_one2many",
    "attr_compare",
    "attr_annotate",
    "reid_standard",
    "reid_cc",
    "reid_vi",
    "reid_t2i",
    "attr_retrieval",
    "adaptive_mm",
)

STAGE3_SETTINGS = ("reid_standard", "reid_cc", "reid_vi", "reid_t2i", "attr_retrieval", "adaptive_mm")

STAGE_OF_KIND = {
    "caption": 1,
    "i2i_pair": 2,
    "i2i_gallery": 2,
    "t2i_pair": 2,
    "t2i_many2one": 2,
    "t2i_one2many": 2,
    "attr_compare": 2,
    "attr_annotate": 2,
    **{kind: 3 for kind in STAGE3_SETTINGS},
}

# Image-to-image tasks carry ~25% each; the five remaining stage-2 tasks 10%.
STAGE2_DEFAULT_FRACTIONS = {
    "i2i_pair": 0.25,
    "i2i_gallery": 0.25,
    "t2i_pair": 0.10,
    "t2i_many2one": 0.10,
    "t2i_one2many": 0.10,
    "attr_compare": 0.10,
    "attr_annotate": 0.10,
}

RETRY_BUDGET = 16


class SynthError(Exception):
    """Base class for synthesis failures."""


class EmptyPoolError(SynthError):
    """No eligible images for the requested task."""


class InsufficientCorpusError(SynthError):
    """The corpus cannot satisfy a task's sampling preconditions."""


class IneligibleImageError(SynthError):
    """A sampled image lacks the caption/profile the task requires."""


class MixPlanError(SynthError):
    """Invalid mix plan."""


class BuildError(SynthError):
    """A dataset build failed; carries the offending task kind."""

    def __init__(self, task_kind: str, cause: Exception):
        super().__init__(f"build failed for task {task_kind!r}: {cause}")
        self.task_kind = task_kind
        self.cause = cause


@dataclass(frozen=True)
class SamplingBounds:
    """Inclusive uniform bounds on gallery size N."""

    a: int = 2
    b: int = 10

    def __post_init__(self):
        if self.a < 2:
            raise ValueError("lower bound must be >= 2")
        if self.b < self.a:
            raise ValueError("upper bound must be >= lower bound")


@dataclass(frozen=True)
class MixPlan:
    """Target fraction per task kind plus the total sample count."""

    fractions: tuple[tuple[str, float], ...]
    total: int

    @classmethod
    def create(cls, fractions: dict[str, float], total: int) -> MixPlan:
        if total <= 0:
            raise MixPlanError("total must be positive")
        for kind, frac in fractions.items():
            if kind not in TASK_KINDS:
                raise MixPlanError(f"unknown task kind {kind!r}")
            if frac < 0:
                raise MixPlanError(f"fraction for {kind!r} must be >= 0")
        if abs(sum(fractions.values()) - 1.0) > 1e-9:
            raise MixPlanError(f"fractions must sum to 1, got {sum(fractions.values())}")
        ordered = tuple((kind, fractions[kind]) for kind in TASK_KINDS if kind in fractions)
        return cls(fractions=ordered, total=total)

    def counts(self) -> dict[str, int]:
        """Integer per-task counts via largest-remainder apportionment."""
        base: dict[str, int] = {}
        remainders: list[tuple[float, str]] = []
        assigned = 0
        for kind, frac in self.fractions:
            exact = frac * self.total
            whole = int(exact)
            base[kind] = whole
            assigned += whole
            remainders.append((exact - whole, kind))
        leftover = self.total - assigned
        for _, kind in sorted(remainders, key=lambda item: (-item[0], item[1]))[:leftover]:
            base[kind] += 1
        return {k: v for k, v in base.items() if v > 0}


def stage2_default_plan(total: int) -> MixPlan:
    return MixPlan.create(dict(STAGE2_DEFAULT_FRACTIONS), total)


def stage1_default_plan(total: int) -> MixPlan:
    return MixPlan.create({"caption": 1.0}, total)


def stage3_default_plan(total: int) -> MixPlan:
    return MixPlan.create({kind: 1.0 / len(STAGE3_SETTINGS) for kind in STAGE3_SETTINGS}, total)


def default_plan(stage: int, total: int) -> MixPlan:
    if stage == 1:
        return stage1_default_plan(total)
    if stage == 2:
        return stage2_default_plan(total)
    if stage == 3:
        return stage3_default_plan(total)
    raise ValueError(f"unknown stage {stage!r}")


@dataclass
class InstructionSample:
    """One synthesized prompt/answer record."""

    sample_id: str
    stage: int
    task_kind: str
    prompt: str
    image_refs: list[str]
    answer: str
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "stage": self.stage,
            "task_kind": self.task_kind,
            "prompt": self.prompt,
            "image_refs": list(self.image_refs),
            "answer": self.answer,
            "meta": dict(self.meta),
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> InstructionSample:
        return cls(
            sample_id=data["sample_id"],
            stage=data["stage"],
            task_kind=data["task_kind"],
            prompt=data["prompt"],
            image_refs=list(data["image_refs"]),
            answer=data["answer"],
            meta=dict(data.get("meta", {})),
        )

    def query_ref(self) -> str | None:
        """The query image ref, for tasks whose first ref is the query."""
        if self.task_kind in ("i2i_gallery", "reid_standard", "reid_cc", "reid_vi"):
            return self.image_refs[0]
        return None

    def gallery_refs(self) -> list[str]:
        """Refs addressed by answer labels, aligned with label positions."""
        if self.task_kind in ("i2i_gallery", "reid_standard", "reid_cc", "reid_vi"):
            return self.image_refs[1:]
        if self.task_kind == "adaptive_mm":
            return list(self.image_refs)
        if self.task_kind in ("t2i_one2many", "reid_t2i", "attr_retrieval"):
            return list(self.image_refs)
        return []


def derive_rng(seed: int, *parts) -> random.Random:
    """Deterministic child generator from a seed plus context parts."""
    key = "|".join([str(seed), *map(str, parts)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def harmonic(n: int) -> float:
    return sum(1.0 / j for j in range(1, n + 1))


def sample_gallery_size(bounds: SamplingBounds, rng: random.Random) -> int:
    """Draw N uniformly from the inclusive interval [a, b]."""
    return rng.randint(bounds.a, bounds.b)


def sample_match_count(n_gallery: int, rng: random.Random) -> int:
    """Draw the per-gallery match count n on {2..N}, weight 1/(k-1).

    Inverse transform over the cumulative unnormalized weights; dividing by
    H(N-1) makes the weights a proper distribution.
    """
    if n_gallery < 2:
        raise ValueError(f"gallery size must be >= 2, got {n_gallery}")
    target = rng.random() * harmonic(n_gallery - 1)
    acc = 0.0
    for k in range(2, n_gallery + 1):
        acc += 1.0 / (k - 1)
        if target < acc:
            return k
    return n_gallery


# ---------------------------------------------------------------------------
# Eligibility pools. All pools are sorted so sampling is deterministic.
# ---------------------------------------------------------------------------


def _captioned_ids(index: CorpusIndex) -> list[str]:
    return [i for i in index.image_ids() if index.caption_of(i)]


def _stage1_pool(index: CorpusIndex) -> list[str]:
    return [i for i in _captioned_ids(index) if not index.records[i].occluded]


def _profiled_ids(index: CorpusIndex) -> list[str]:
    return [i for i in index.image_ids() if i in index.attributes]


def _identities_with_min_images(index: CorpusIndex, minimum: int) -> list[str]:
    return [pid for pid in index.identities() if len(index.by_identity[pid]) >= minimum]


def _distractor_pool(index: CorpusIndex, identity_id: str, ids: list[str] | None = None) -> list[str]:
    source = ids if ids is not None else index.image_ids()
    return [i for i in source if index.records[i].identity_id != identity_id]


def _plant_gallery(rng: random.Random, matches: list[str], distractors: list[str]) -> tuple[list[str], list[int]]:
    """Shuffle matches and distractors together; return (gallery, positions)."""
    gallery = list(matches) + list(distractors)
    rng.shuffle(gallery)
    match_set = set(matches)
    positions = [i + 1 for i, ref in enumerate(gallery) if ref in match_set]
    return gallery, positions


def _meta(seed: int | None = None, **fields) -> dict:
    out = {k: v for k, v in fields.items() if v is not None}
    if seed is not None:
        out["seed"] = seed
    return out


def _sample_id(kind: str, rng: random.Random) -> str:
    return f"{kind}-{rng.getrandbits(40):010x}"


# ---------------------------------------------------------------------------
# Stage 1: attribute captioning
# ---------------------------------------------------------------------------


def synth_stage1(index: CorpusIndex, count: int, rng: random.Random) -> Iterator[InstructionSample]:
    """Stream captioning samples; occluded images are never sampled."""
    pool = _stage1_pool(index)
    if not pool:
        raise EmptyPoolError("no non-occluded captioned images available for stage 1")
    for _ in range(count):
        yield _synth_caption(index, rng, pool=pool)


def _synth_caption(
    index: CorpusIndex,
    rng: random.Random,
    pool: list[str] | None = None,
    sample_id: str | None = None,
    seed: int | None = None,
) -> InstructionSample:
    eligible = pool if pool is not None else _stage1_pool(index)
    if not eligible:
        raise EmptyPoolError("no non-occluded captioned images available for stage 1")
    image_id = rng.choice(eligible)
    return InstructionSample(
        sample_id=sample_id or _sample_id("caption", rng),
        stage=1,
        task_kind="caption",
        prompt=prompts.render("caption"),
        image_refs=[image_id],
        answer=index.caption_of(image_id) or "",
        meta=_meta(seed=seed),
    )


# ---------------------------------------------------------------------------
# Stage 2: fine-grained retrieval tasks
# ---------------------------------------------------------------------------


def synth_i2i_pair(
    index: CorpusIndex,
    rng: random.Random,
    sample_id: str | None = None,
    seed: int | None = None,
) -> InstructionSample:
    """Same-person yes/no over two images, balanced at probability 0.5."""
    multi = _identities_with_min_images(index, 2)
    identities = index.identities()
    if not multi or len(identities) < 2:
        raise InsufficientCorpusError("need an identity with >= 2 images and >= 2 identities")
    positive = rng.random() < 0.5
    if positive:
        pid = rng.choice(multi)
        first, second = rng.sample(index.by_identity[pid], 2)
    else:
        pid_a, pid_b = rng.sample(identities, 2)
        first = rng.choice(index.by_identity[pid_a])
        second = rng.choice(index.by_identity[pid_b])
    return InstructionSample(
        sample_id=sample_id or _sample_id("i2i_pair", rng),
        stage=2,
        task_kind="i2i_pair",
        prompt=prompts.render("i2i_pair"),
        image_refs=[first, second],
        answer="yes" if positive else "no",
        meta=_meta(seed=seed, is_positive=positive),
    )


def synth_i2i_gallery(
    index: CorpusIndex,
    bounds: SamplingBounds,
    rng: random.Random,
    sample_id: str | None = None,
    seed: int | None = None,
) -> InstructionSample:
    """Query plus an N-image gallery holding exactly n same-identity images."""
    multi = _identities_with_min_images(index, 2)
    if not multi:
        raise InsufficientCorpusError("no identity with >= 2 images")
    for _ in range(RETRY_BUDGET):
        size = sample_gallery_size(bounds, rng)
        drawn = sample_match_count(size, rng)
        pid = rng.choice(multi)
        images = index.by_identity[pid]
        query = rng.choice(images)
        candidates = [i for i in images if i != query]
        n_actual = min(drawn, len(candidates), size)
        distractors_pool = _distractor_pool(index, pid)
        if n_actual < 1 or len(distractors_pool) < size - n_actual:
            continue
        matches = rng.sample(candidates, n_actual)
        distractors = rng.sample(distractors_pool, size - n_actual)
        gallery, positions = _plant_gallery(rng, matches, distractors)
        return InstructionSample(
            sample_id=sample_id or _sample_id("i2i_gallery", rng),
            stage=2,
            task_kind="i2i_gallery",
            prompt=prompts.render("i2i_gallery", gallery=prompts.gallery_block(size)),
            image_refs=[query] + gallery,
            answer=prompts.labels_answer(positions),
            meta=_meta(seed=seed, gallery_size=size, match_count=n_actual),
        )
    raise InsufficientCorpusError("could not satisfy gallery sampling within retry budget")


def synth_t2i(
    index: CorpusIndex,
    level: str,
    bounds: SamplingBounds,
    rng: random.Random,
    sample_id: str | None = None,
    seed: int | None = None,
) -> InstructionSample:
    """Text-to-image retrieval at pair, many-to-one, or one-to-many level."""
    if level not in ("pair", "many2one", "one2many"):
        raise ValueError(f"unknown t2i level {level!r}")
    captioned = _captioned_ids(index)
    if not captioned:
        raise IneligibleImageError("no captioned images available")
    kind = {"pair": "t2i_pair", "many2one": "t2i_many2one", "one2many": "t2i_one2many"}[level]

    if level == "pair":
        image_id = rng.choice(captioned)
        positive = rng.random() < 0.5
        if positive:
            text = index.caption_of(image_id)
        else:
            others = _distractor_pool(index, index.identity_of(image_id), captioned)
            if not others:
                raise InsufficientCorpusError("need captions from a second identity for negatives")
            text = index.caption_of(rng.choice(others))
        return InstructionSample(
            sample_id=sample_id or _sample_id(kind, rng),
            stage=2,
            task_kind=kind,
            prompt=prompts.render("t2i_pair", text=text),
            image_refs=[image_id],
            answer="yes" if positive else "no",
            meta=_meta(seed=seed, is_positive=positive),
        )

    for _ in range(RETRY_BUDGET):
        size = sample_gallery_size(bounds, rng)
        image_id = rng.choice(captioned)
        pid = index.identity_of(image_id)
        caption = index.caption_of(image_id)
        if level == "many2one":
            pool = [i for i in _distractor_pool(index, pid, captioned) if index.caption_of(i) != caption]
            if len(pool) < size - 1:
                continue
            others = [index.caption_of(i) or "" for i in rng.sample(pool, size - 1)]
            position = rng.randint(1, size)
            options = others[: position - 1] + [caption or ""] + others[position - 1 :]
            return InstructionSample(
                sample_id=sample_id or _sample_id(kind, rng),
                stage=2,
                task_kind=kind,
                prompt=prompts.render("t2i_many2one", options=prompts.options_block(options)),
                image_refs=[image_id],
                answer=prompts.description_label(position),
                meta=_meta(seed=seed, gallery_size=size, match_count=1),
            )
        # one2many: one caption against a gallery with exactly one match
        match = rng.choice(index.by_identity[pid])
        pool = _distractor_pool(index, pid)
        if len(pool) < size - 1:
            continue
        gallery, positions = _plant_gallery(rng, [match], rng.sample(pool, size - 1))
        return InstructionSample(
            sample_id=sample_id or _sample_id(kind, rng),
            stage=2,
            task_kind=kind,
            prompt=prompts.render("t2i_one2many", gallery=prompts.gallery_block(size), text=caption),
            image_refs=gallery,
            answer=prompts.image_label(positions[0]),
            meta=_meta(seed=seed, gallery_size=size, match_count=1),
        )
    raise InsufficientCorpusError(f"could not satisfy t2i {level} sampling within retry budget")


def _diff_answer(first, second) -> str:
    shared = []
    differing = []
    a_fields = first.populated()
    b_fields = second.populated()
    for name in a_fields:
        if name not in b_fields:
            continue
        label = prompts.FIELD_LABELS[name]
        if a_fields[name] == b_fields[name]:
            shared.append(f"{label}: {a_fields[name]}")
        else:
            differing.append(f"{label}: {a_fields[name]} (Image 1) vs {b_fields[name]} (Image 2)")
    shared_text = "; ".join(shared) if shared else "none"
    differing_text = "; ".join(differing) if differing else "none"
    return f"Shared attributes: {shared_text}.\nDiffering attributes: {differing_text}."


def _annotate_answer(profile) -> str:
    fields = profile.populated()
    return "; ".join(f"{prompts.FIELD_LABELS[name]}: {value}" for name, value in fields.items())


def synth_attr(
    index: CorpusIndex,
    kind: str,
    rng: random.Random,
    sample_id: str | None = None,
    seed: int | None = None,
) -> InstructionSample:
    """Attribute comparison over two images, or annotation of one."""
    if kind not in ("compare", "annotate"):
        raise ValueError(f"unknown attr task {kind!r}")
    pool = _profiled_ids(index)
    task_kind = f"attr_{kind}"
    if kind == "compare":
        if len(pool) < 2:
            raise IneligibleImageError("attribute comparison needs two profiled images")
        first, second = rng.sample(pool, 2)
        return InstructionSample(
            sample_id=sample_id or _sample_id(task_kind, rng),
            stage=2,
            task_kind=task_kind,
            prompt=prompts.render("attr_compare"),
            image_refs=[first, second],
            answer=_diff_answer(index.attributes[first], index.attributes[second]),
            meta=_meta(seed=seed),
        )
    if not pool:
        raise IneligibleImageError("attribute annotation needs a profiled image")
    image_id = rng.choice(pool)
    return InstructionSample(
        sample_id=sample_id or _sample_id(task_kind, rng),
        stage=2,
        task_kind=task_kind,
        prompt=prompts.render("attr_annotate"),
        image_refs=[image_id],
        answer=_annotate_answer(index.attributes[image_id]),
        meta=_meta(seed=seed),
    )


# ---------------------------------------------------------------------------
# Stage 3: task-level retrieval objectives
# ---------------------------------------------------------------------------


def _stage3_match_count(size: int, available: int, rng: random.Random) -> int:
    """Match count for stage-3 galleries: the stage-2 law clamped to >= 1."""
    drawn = sample_match_count(size, rng) if size >= 2 else 1
    return max(1, min(drawn, available, size))


def _gallery_setting_sample(
    index: CorpusIndex,
    setting: str,
    bounds: SamplingBounds,
    rng: random.Random,
    sample_id: str | None,
    seed: int | None,
) -> InstructionSample:
    """Shared path for reid_standard / reid_cc / reid_vi."""
    for _ in range(RETRY_BUDGET):
        size = sample_gallery_size(bounds, rng)
        if setting == "reid_standard":
            eligible = _identities_with_min_images(index, 2)
        elif setting == "reid_cc":
            eligible = [
                pid
                for pid in index.identities()
                if len({index.records[i].clothing_state_id for i in index.by_identity[pid]} - {None}) >= 2
            ]
        else:  # reid_vi
            eligible = [
                pid
                for pid in index.identities()
                if len({index.records[i].modality for i in index.by_identity[pid]}) == 2
            ]
        if not eligible:
            raise InsufficientCorpusError(f"no identity satisfies the {setting} precondition")
        pid = rng.choice(eligible)
        images = index.by_identity[pid]
        if setting == "reid_cc":
            candidates_by_query = [
                (q, [i for i in images if i != q and index.records[i].clothing_state_id != index.records[q].clothing_state_id])
                for q in images
                if index.records[q].clothing_state_id is not None
            ]
        elif setting == "reid_vi":
            candidates_by_query = [
                (q, [i for i in images if index.records[i].modality != index.records[q].modality]) for q in images
            ]
        else:
            candidates_by_query = [(q, [i for i in images if i != q]) for q in images]
        candidates_by_query = [(q, c) for q, c in candidates_by_query if c]
        if not candidates_by_query:
            continue
        query, match_pool = candidates_by_query[rng.randrange(len(candidates_by_query))]
        n_actual = _stage3_match_count(size, len(match_pool), rng)
        # Same-identity images outside the match pool would violate the
        # setting's match contract, so distractors come from other identities.
        distractor_pool = _distractor_pool(index, pid)
        if len(distractor_pool) < size - n_actual:
            continue
        matches = rng.sample(match_pool, n_actual)
        distractors = rng.sample(distractor_pool, size - n_actual)
        gallery, positions = _plant_gallery(rng, matches, distractors)
        return InstructionSample(
            sample_id=sample_id or _sample_id(setting, rng),
            stage=3,
            task_kind=setting,
            prompt=prompts.render(setting, gallery=prompts.gallery_block(size)),
            image_refs=[query] + gallery,
            answer=prompts.labels_answer(positions),
            meta=_meta(seed=seed, gallery_size=size, match_count=n_actual),
        )
    raise InsufficientCorpusError(f"could not satisfy {setting} sampling within retry budget")


def _reid_t2i_sample(index, bounds, rng, sample_id, seed) -> InstructionSample:
    captioned = _captioned_ids(index)
    if not captioned:
        raise InsufficientCorpusError("reid_t2i requires captioned images")
    for _ in range(RETRY_BUDGET):
        size = sample_gallery_size(bounds, rng)
        source = rng.choice(captioned)
        pid = index.identity_of(source)
        pool = _distractor_pool(index, pid)
        if len(pool) < size - 1:
            continue
        gallery, positions = _plant_gallery(rng, [source], rng.sample(pool, size - 1))
        return InstructionSample(
            sample_id=sample_id or _sample_id("reid_t2i", rng),
            stage=3,
            task_kind="reid_t2i",
            prompt=prompts.render("reid_t2i", gallery=prompts.gallery_block(size), text=index.caption_of(source)),
            image_refs=gallery,
            answer=prompts.image_label(positions[0]),
            meta=_meta(seed=seed, gallery_size=size, match_count=1),
        )
    raise InsufficientCorpusError("could not satisfy reid_t2i sampling within retry budget")


def _fragment_of(profile, rng: random.Random, exclude: set[str] | None = None) -> dict:
    fields = {k: v for k, v in profile.populated().items() if not exclude or k not in exclude}
    if not fields:
        return {}
    names = sorted(fields)
    take = rng.randint(1, min(3, len(names)))
    return {name: fields[name] for name in sorted(rng.sample(names, take))}


def _attr_retrieval_sample(index, bounds, rng, sample_id, seed) -> InstructionSample:
    profiled = _profiled_ids(index)
    if not profiled:
        raise InsufficientCorpusError("attr_retrieval requires profiled images")
    for _ in range(RETRY_BUDGET):
        size = sample_gallery_size(bounds, rng)
        source = rng.choice(profiled)
        fragment = _fragment_of(index.attributes[source], rng)
        if not fragment:
            continue
        pid = index.identity_of(source)
        # Distractors must not satisfy the fragment, or the answer is ambiguous.
        pool = [
            i
            for i in _distractor_pool(index, pid, profiled)
            if not index.attributes[i].matches_fragment(fragment)
        ]
        if len(pool) < size - 1:
            continue
        gallery, positions = _plant_gallery(rng, [source], rng.sample(pool, size - 1))
        return InstructionSample(
            sample_id=sample_id or _sample_id("attr_retrieval", rng),
            stage=3,
            task_kind="attr_retrieval",
            prompt=prompts.render(
                "attr_retrieval",
                gallery=prompts.gallery_block(size),
                attributes=prompts.serialize_attributes(fragment),
            ),
            image_refs=gallery,
            answer=prompts.image_label(positions[0]),
            meta=_meta(seed=seed, gallery_size=size, match_count=1),
        )
    raise InsufficientCorpusError("could not satisfy attr_retrieval sampling within retry budget")


def _adaptive_mm_sample(index, bounds, rng, sample_id, seed) -> InstructionSample:
    profiled = [i for i in _profiled_ids(index) if len(index.by_identity[index.identity_of(i)]) >= 2]
    if not profiled:
        raise InsufficientCorpusError("adaptive_mm requires a profiled identity with >= 2 images")
    for _ in range(RETRY_BUDGET):
        round1_size = sample_gallery_size(bounds, rng)
        round2_size = sample_gallery_size(bounds, rng)
        anchor = rng.choice(profiled)
        pid = index.identity_of(anchor)
        profile = index.attributes[anchor]
        fragment = _fragment_of(profile, rng)
        if not fragment:
            continue
        round1_pool = [
            i
            for i in _distractor_pool(index, pid, _profiled_ids(index))
            if not index.attributes[i].matches_fragment(fragment)
        ]
        if len(round1_pool) < round1_size - 1:
            continue
        round1_gallery, round1_positions = _plant_gallery(rng, [anchor], rng.sample(round1_pool, round1_size - 1))
        extras = {k: v for k, v in profile.populated().items() if k not in fragment}
        if extras:
            extra_name = rng.choice(sorted(extras))
            extra_text = prompts.serialize_attributes({extra_name: extras[extra_name]})
        elif profile.caption:
            extra_text = profile.caption
        else:
            continue
        remaining = [i for i in index.by_identity[pid] if i != anchor]
        n2 = _stage3_match_count(round2_size, len(remaining), rng)
        round2_pool = _distractor_pool(index, pid)
        if len(round2_pool) < round2_size - n2:
            continue
        matches = rng.sample(remaining, n2)
        round2_gallery, round2_positions = _plant_gallery(rng, matches, rng.sample(round2_pool, round2_size - n2))
        offset = round1_size
        return InstructionSample(
            sample_id=sample_id or _sample_id("adaptive_mm", rng),
            stage=3,
            task_kind="adaptive_mm",
            prompt=prompts.render(
                "adaptive_mm",
                round1_gallery=prompts.gallery_block(round1_size),
                fragment=prompts.serialize_attributes(fragment),
                round1_answer=prompts.image_label(round1_positions[0]),
                extra_text=extra_text,
                round2_gallery=prompts.gallery_block(round2_size, start=offset + 1),
            ),
            image_refs=round1_gallery + round2_gallery,
            answer=prompts.labels_answer([offset + p for p in round2_positions]),
            meta=_meta(seed=seed, gallery_size=round2_size, match_count=n2),
        )
    raise InsufficientCorpusError("could not satisfy adaptive_mm sampling within retry budget")


def synth_stage3(
    index: CorpusIndex,
    setting: str,
    bounds: SamplingBounds,
    rng: random.Random,
    sample_id: str | None = None,
    seed: int | None = None,
) -> InstructionSample:
    """One stage-3 sample; every gallery carries at least one true match."""
    if setting in ("reid_standard", "reid_cc", "reid_vi"):
        return _gallery_setting_sample(index, setting, bounds, rng, sample_id, seed)
    if setting == "reid_t2i":
        return _reid_t2i_sample(index, bounds, rng, sample_id, seed)
    if setting == "attr_retrieval":
        return _attr_retrieval_sample(index, bounds, rng, sample_id, seed)
    if setting == "adaptive_mm":
        return _adaptive_mm_sample(index, bounds, rng, sample_id, seed)
    raise ValueError(f"unknown stage-3 setting {setting!r}")


# ---------------------------------------------------------------------------
# Mixed builds
# ---------------------------------------------------------------------------


def _synth_one(index: CorpusIndex, kind: str, bounds: SamplingBounds, rng: random.Random, sample_id: str, seed: int) -> InstructionSample:
    if kind == "caption":
        return _synth_caption(index, rng, sample_id=sample_id, seed=seed)
    if kind == "i2i_pair":
        return synth_i2i_pair(index, rng, sample_id=sample_id, seed=seed)
    if kind == "i2i_gallery":
        return synth_i2i_gallery(index, bounds, rng, sample_id=sample_id, seed=seed)
    if kind.startswith("t2i_"):
        return synth_t2i(index, kind.removeprefix("t2i_"), bounds, rng, sample_id=sample_id, seed=seed)
    if kind in ("attr_compare", "attr_annotate"):
        return synth_attr(index, kind.removeprefix("attr_"), rng, sample_id=sample_id, seed=seed)
    if kind in STAGE3_SETTINGS:
        return synth_stage3(index, kind, bounds, rng, sample_id=sample_id, seed=seed)
    raise ValueError(f"unknown task kind {kind!r}")


def build_mix(plan: MixPlan, index: CorpusIndex, bounds: SamplingBounds, seed: int) -> Iterator[InstructionSample]:
    """Stream a seeded, shuffled dataset realizing the plan's counts.

    Each sample's generator derives from (seed, ordinal), so identical
    inputs produce identical bytes regardless of generation order.
    """
    counts = plan.counts()
    assignments: list[str] = []
    for kind in TASK_KINDS:
        assignments.extend([kind] * counts.get(kind, 0))
    order = list(range(len(assignments)))
    derive_rng(seed, "order").shuffle(order)
    for ordinal in order:
        kind = assignments[ordinal]
        child_rng = derive_rng(seed, "sample", ordinal)
        child_seed = child_rng.getrandbits(32)
        sample_id = f"{seed & 0xFFFFFFFF:08x}-{ordinal:07d}"
        try:
            yield _synth_one(index, kind, bounds, child_rng, sample_id=sample_id, seed=child_seed)
        except SynthError as exc:
            raise BuildError(kind, exc) from exc


def write_dataset(
    plan: MixPlan,
    index: CorpusIndex,
    bounds: SamplingBounds,
    seed: int,
    out_path: str | Path,
) -> dict:
    """Write a build to JSONL and return its sidecar manifest."""
    out_path = Path(out_path)
    digest = hashlib.sha256()
    realized: dict[str, int] = {}
    with open(out_path, "w", encoding="utf-8") as fh:
        for sample in build_mix(plan, index, bounds, seed):
            line = sample.to_json_line() + "\n"
            fh.write(line)
            digest.update(line.encode("utf-8"))
            realized[sample.task_kind] = realized.get(sample.task_kind, 0) + 1
    manifest = {
        "plan": {"fractions": dict(plan.fractions), "total": plan.total},
        "bounds": {"a": bounds.a, "b": bounds.b},
        "seed": seed,
        "counts": dict(sorted(realized.items())),
        "digest": f"sha256:{digest.hexdigest()}",
        "template_version": prompts.template_version(),
    }
    manifest_path = out_path.with_suffix(out_path.suffix + ".manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_dataset(path: str | Path) -> Iterator[InstructionSample]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield InstructionSample.from_dict(json.loads(line))
