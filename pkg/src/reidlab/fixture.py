"""Synthetic fixture corpus: seeded identities with attributes and captions.

Each identity gets six images spread over two cameras, two modalities, and
two clothing states, which is enough to exercise every retrieval setting.
Attribute profiles drive deterministic captions; a numbered accessory makes
every identity's caption unique so text queries resolve unambiguously.
"""

from __future__ import annotations

import random

from .corpus import AttributeProfile, CorpusIndex, ImageRecord

GENDERS = ("male", "female")
AGE_RANGES = ("late teens", "20s", "30s", "40s", "50s", "60s")
HAIR = ("short black hair", "long brown hair", "blond ponytail", "gray buzz cut", "curly dark hair", "shaved head")
CLOTHING_TYPES = ("jacket", "hoodie", "t-shirt", "coat", "sweater", "shirt")
COLORS = ("red", "blue", "green", "black", "white", "yellow", "gray", "orange", "purple", "brown")
FOOTWEAR_TYPES = ("sneakers", "boots", "sandals", "loafers", "running shoes")
POSTURES = ("upright brisk walk", "slight slouch", "slow stroll", "hurried stride", "relaxed gait")
ACCESSORY_KINDS = ("backpack", "shoulder bag", "baseball cap", "umbrella", "tote bag", "scarf")

# camera, modality, clothing-state layout of the six per-identity images
_IMAGE_LAYOUT = (
    ("c1", "visible", "a"),
    ("c2", "visible", "a"),
    ("c1", "visible", "b"),
    ("c2", "visible", "b"),
    ("c1", "infrared", "a"),
    ("c2", "infrared", "b"),
)


def _caption(profile: AttributeProfile) -> str:
    return (
        f"A {profile.gender} pedestrian, {profile.age_range}, with {profile.hair}, "
        f"wearing a {profile.clothing_color} {profile.clothing_type} and "
        f"{profile.footwear_color} {profile.footwear_type}, {profile.posture_gait}, "
        f"carrying {profile.patterns_accessories}; {profile.distinguishing_features}."
    )


def _profiles_for_identity(ordinal: int, rng: random.Random) -> dict[str, AttributeProfile]:
    """One profile per clothing state; non-clothing fields stay fixed."""
    base = {
        "gender": rng.choice(GENDERS),
        "age_range": rng.choice(AGE_RANGES),
        "hair": rng.choice(HAIR),
        "footwear_type": rng.choice(FOOTWEAR_TYPES),
        "posture_gait": rng.choice(POSTURES),
        "patterns_accessories": f"a {rng.choice(ACCESSORY_KINDS)} numbered {ordinal:03d}",
        "distinguishing_features": f"identity marker {ordinal:03d}",
    }
    state_a_type, state_b_type = rng.sample(CLOTHING_TYPES, 2)
    state_a_color, state_b_color = rng.sample(COLORS, 2)
    footwear_color = rng.choice(COLORS)
    profiles = {}
    for state, ctype, ccolor in (("a", state_a_type, state_a_color), ("b", state_b_type, state_b_color)):
        fields = dict(base, clothing_type=ctype, clothing_color=ccolor, footwear_color=footwear_color)
        profiles[state] = AttributeProfile(**fields, caption=_caption(AttributeProfile(**fields)))
    return profiles


def build_fixture_index(identities: int = 50, seed: int = 7) -> CorpusIndex:
    """Build the synthetic corpus: identities x 6 images, fully annotated."""
    records: list[ImageRecord] = []
    attributes: dict[str, AttributeProfile] = {}
    rng = random.Random(seed)
    for i in range(identities):
        pid = f"pid_{i:03d}"
        profiles = _profiles_for_identity(i, rng)
        for k, (camera, modality, state) in enumerate(_IMAGE_LAYOUT, start=1):
            image_id = f"fx_{i:03d}_{k}"
            records.append(
                ImageRecord(
                    image_id=image_id,
                    dataset_id="fixture",
                    identity_id=pid,
                    camera_id=camera,
                    modality=modality,
                    width=rng.randint(96, 192),
                    height=rng.randint(200, 384),
                    uri=f"synthetic://fixture/{image_id}",
                    clothing_state_id=state,
                )
            )
            attributes[image_id] = profiles[state]
    return CorpusIndex.build(records, attributes=attributes)
