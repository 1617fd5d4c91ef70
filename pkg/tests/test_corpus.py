from __future__ import annotations

import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from reidlab.corpus import (
    AnnotationError,
    AttributeProfile,
    CorpusIndex,
    EmptyCorpusError,
    ImageRecord,
    ManifestConflictError,
    ManifestParseError,
    filter_by_quality,
    mark_occlusions,
    parse_manifest,
    resize_policy,
    serialize_manifest,
)
from conftest import make_corpus, make_profile, make_record


def manifest_line(image_id, identity_id="p1", width=128, height=256, **extra):
    data = {
        "image_id": image_id,
        "dataset_id": "test",
        "identity_id": identity_id,
        "camera_id": "c1",
        "modality": "visible",
        "width": width,
        "height": height,
        "uri": f"synthetic://test/{image_id}",
    }
    data.update(extra)
    return json.dumps(data)


class TestParseManifest:
    def test_three_valid_lines(self):
        text = "\n".join(
            [
                manifest_line("m1501_0001_c1_001", identity_id="p1"),
                manifest_line("m1501_0001_c2_002", identity_id="p1"),
                manifest_line("m1501_0002_c1_001", identity_id="p2"),
            ]
        )
        index = parse_manifest(io.StringIO(text))
        assert index.stats.total == 3
        assert index.by_identity["p1"] == ["m1501_0001_c1_001", "m1501_0001_c2_002"]
        assert index.by_identity["p2"] == ["m1501_0002_c1_001"]

    def test_missing_identity_names_line(self):
        lines = [manifest_line("a1"), manifest_line("a2")]
        broken = json.loads(lines[1])
        del broken["identity_id"]
        lines[1] = json.dumps(broken)
        with pytest.raises(ManifestParseError) as err:
            parse_manifest(io.StringIO("\n".join(lines)))
        assert err.value.line_no == 2
        assert "identity_id" in str(err.value)

    def test_duplicate_image_id_conflict(self):
        text = "\n".join(
            [
                manifest_line("m1501_0001_c1_001"),
                manifest_line("m1501_0001_c1_001"),
            ]
        )
        with pytest.raises(ManifestConflictError) as err:
            parse_manifest(io.StringIO(text))
        assert err.value.image_id == "m1501_0001_c1_001"

    def test_empty_input(self):
        with pytest.raises(EmptyCorpusError):
            parse_manifest(io.StringIO(""))

    def test_invalid_json_names_line(self):
        with pytest.raises(ManifestParseError) as err:
            parse_manifest(io.StringIO(manifest_line("a1") + "\n{not json"))
        assert err.value.line_no == 2

    def test_invalid_modality_rejected(self):
        line = manifest_line("a1").replace('"visible"', '"thermal"')
        with pytest.raises(ManifestParseError):
            parse_manifest(io.StringIO(line))

    def test_nonpositive_dimensions_rejected(self):
        with pytest.raises(ManifestParseError):
            parse_manifest(io.StringIO(manifest_line("a1", width=0)))

    def test_bytes_stream_accepted(self):
        index = parse_manifest(io.BytesIO(manifest_line("a1").encode()))
        assert index.stats.total == 1

    def test_roundtrip_identical(self):
        text = "\n".join(
            [
                manifest_line("b2", identity_id="p2", clothing_state_id="s1"),
                manifest_line("a1", quality_flags=["occluded"]),
                manifest_line("c3", attributes={"gender": "male", "caption": "a man"}),
            ]
        )
        first = parse_manifest(io.StringIO(text))
        second = parse_manifest(io.StringIO("\n".join(serialize_manifest(first))))
        assert first == second


class TestFilterByQuality:
    def test_below_both_thresholds_removed(self):
        index = CorpusIndex.build([make_record("a", width=32, height=64)])
        out = filter_by_quality(index, min_width=128, min_height=64)
        assert out.stats.total == 0
        assert out.stats.removed == 1

    def test_boundary_inclusive(self):
        index = CorpusIndex.build([make_record("a", width=128, height=64)])
        out = filter_by_quality(index, min_width=128, min_height=64)
        assert out.stats.total == 1
        assert out.stats.removed == 0

    def test_counts_by_enumeration(self):
        # 10 records, 4 below threshold: direct enumeration oracle.
        records = [make_record(f"small{k}", identity_id=f"p{k}", width=100, height=200) for k in range(4)]
        records += [make_record(f"big{k}", identity_id=f"p{k+4}", width=200, height=400) for k in range(6)]
        index = CorpusIndex.build(records)
        out = filter_by_quality(index, min_width=150, min_height=300)
        assert out.stats.total == 6
        assert out.stats.removed == 4

    def test_idempotent(self):
        records = [make_record(f"r{k}", width=50 + 20 * k, height=100 + 40 * k) for k in range(8)]
        index = CorpusIndex.build(records)
        once = filter_by_quality(index, min_width=90, min_height=180)
        twice = filter_by_quality(once, min_width=90, min_height=180)
        assert once == twice

    def test_identity_subset_invariant(self):
        index = make_corpus(identities=4, images_per_identity=2)
        out = filter_by_quality(index, min_width=64, min_height=128)
        assert set(out.by_identity) <= set(index.by_identity)

    def test_nonpositive_thresholds_rejected(self):
        index = CorpusIndex.build([make_record("a")])
        with pytest.raises(ValueError):
            filter_by_quality(index, min_width=0, min_height=10)


class StubCaptioner:
    """Returns canned profiles; raises for ids in `failing`."""

    def __init__(self, profiles, failing=()):
        self.profiles = profiles
        self.failing = set(failing)

    def caption(self, record):
        if record.image_id in self.failing:
            raise TimeoutError(f"timeout for {record.image_id}")
        return self.profiles[record.image_id]


class TestMarkOcclusions:
    def test_clothing_present_not_flagged(self):
        index = CorpusIndex.build([make_record("a")])
        captioner = StubCaptioner({"a": AttributeProfile(clothing_type="red jacket")})
        out = mark_occlusions(index, captioner)
        assert not out.records["a"].occluded

    def test_no_clothing_flagged_occluded(self):
        index = CorpusIndex.build([make_record("a")])
        captioner = StubCaptioner({"a": AttributeProfile(gender="male")})
        out = mark_occlusions(index, captioner)
        assert out.records["a"].occluded

    def test_partial_failure_lists_ids(self):
        records = [make_record(f"r{k}") for k in range(5)]
        index = CorpusIndex.build(records)
        profiles = {f"r{k}": AttributeProfile(clothing_type="coat") for k in range(5)}
        captioner = StubCaptioner(profiles, failing={"r1", "r3"})
        with pytest.raises(AnnotationError) as err:
            mark_occlusions(index, captioner)
        assert err.value.failed_ids == ["r1", "r3"]

    def test_profiles_stored(self):
        index = CorpusIndex.build([make_record("a")])
        profile = AttributeProfile(clothing_type="coat", caption="a coat")
        out = mark_occlusions(index, StubCaptioner({"a": profile}))
        assert out.attributes["a"] == profile

    def test_flags_only_no_removal(self):
        index = CorpusIndex.build([make_record("a"), make_record("b", identity_id="p2")])
        captioner = StubCaptioner(
            {"a": AttributeProfile(gender="male"), "b": AttributeProfile(clothing_type="coat")}
        )
        out = mark_occlusions(index, captioner)
        assert out.stats.total == 2


class TestResizePolicy:
    def test_stage1_upsizes(self):
        assert resize_policy(1, width=100, height=200) == (128, 256)

    def test_stage1_leaves_large(self):
        assert resize_policy(1, width=200, height=400) == (200, 400)

    def test_stage1_either_dimension_triggers(self):
        assert resize_policy(1, width=100, height=400) == (128, 256)
        assert resize_policy(1, width=200, height=200) == (128, 256)

    def test_stage2_downsizes(self):
        assert resize_policy(2, width=250, height=500) == (192, 384)

    def test_stage2_leaves_small(self):
        assert resize_policy(2, width=100, height=200) == (100, 200)

    def test_stage3_identity(self):
        assert resize_policy(3, width=333, height=777) == (333, 777)

    def test_unknown_stage(self):
        with pytest.raises(ValueError):
            resize_policy(4, width=10, height=10)

    @given(
        stage=st.sampled_from([1, 2, 3]),
        width=st.integers(min_value=1, max_value=2000),
        height=st.integers(min_value=1, max_value=2000),
    )
    def test_idempotent(self, stage, width, height):
        once = resize_policy(stage, width, height)
        assert resize_policy(stage, *once) == once


class TestAttributeProfile:
    def test_occluded_requires_no_clothing_type(self):
        with pytest.raises(ValueError):
            AttributeProfile(occluded=True, clothing_type="coat")

    def test_fragment_matching(self):
        profile = make_profile(0)
        assert profile.matches_fragment({"clothing_color": profile.clothing_color})
        assert not profile.matches_fragment({"clothing_color": "nonexistent color"})
        assert not profile.matches_fragment({"not_a_field": "x"})

    def test_dict_roundtrip(self):
        profile = make_profile(1)
        assert AttributeProfile.from_dict(profile.to_dict()) == profile


class TestCorpusIndex:
    def test_identity_lists_sorted(self):
        index = make_corpus(identities=2, images_per_identity=3)
        for ids in index.by_identity.values():
            assert ids == sorted(ids)

    def test_every_indexed_id_exists(self):
        index = make_corpus()
        for ids in index.by_identity.values():
            assert all(i in index.records for i in ids)
        for ids in index.by_camera.values():
            assert all(i in index.records for i in ids)
