from __future__ import annotations

import pytest

from reidlab.corpus import AttributeProfile, CorpusIndex, ImageRecord
from reidlab.fixture import build_fixture_index


@pytest.fixture(scope="session")
def fixture_index() -> CorpusIndex:
    return build_fixture_index(identities=50, seed=7)


@pytest.fixture(scope="session")
def small_index() -> CorpusIndex:
    """Tiny corpus: 3 identities x 3 images, fully captioned."""
    return make_corpus(identities=3, images_per_identity=3)


def make_record(
    image_id: str,
    identity_id: str = "p1",
    camera_id: str = "c1",
    modality: str = "visible",
    width: int = 128,
    height: int = 256,
    clothing_state_id: str | None = None,
    dataset_id: str = "test",
) -> ImageRecord:
    return ImageRecord(
        image_id=image_id,
        dataset_id=dataset_id,
        identity_id=identity_id,
        camera_id=camera_id,
        modality=modality,
        width=width,
        height=height,
        uri=f"synthetic://test/{image_id}",
        clothing_state_id=clothing_state_id,
    )


def make_profile(identity_ordinal: int, **overrides) -> AttributeProfile:
    fields = {
        "gender": "female" if identity_ordinal % 2 else "male",
        "age_range": "30s",
        "hair": "short black hair",
        "clothing_type": "jacket",
        "clothing_color": ["red", "blue", "green", "yellow", "purple"][identity_ordinal % 5],
        "footwear_type": "sneakers",
        "footwear_color": "white",
        "posture_gait": "upright walk",
        "patterns_accessories": f"bag tag {identity_ordinal}",
        "distinguishing_features": f"marker {identity_ordinal}",
    }
    fields.update(overrides)
    profile = AttributeProfile(**fields)
    caption = (
        f"A {profile.gender} pedestrian in a {profile.clothing_color} "
        f"{profile.clothing_type}, {profile.distinguishing_features}."
    )
    return AttributeProfile(**fields, caption=caption)


def make_corpus(identities: int = 3, images_per_identity: int = 3, cameras: int = 2) -> CorpusIndex:
    records = []
    attributes = {}
    for i in range(identities):
        for k in range(images_per_identity):
            image_id = f"im_{i}_{k}"
            records.append(
                make_record(
                    image_id,
                    identity_id=f"p{i}",
                    camera_id=f"c{(k % cameras) + 1}",
                )
            )
            attributes[image_id] = make_profile(i)
    return CorpusIndex.build(records, attributes=attributes)
