import json

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrvqa.data import (
    ClipLoader,
    LabelKind,
    VideoRecord,
    build_contrastive_batch,
    ingest_vmaf_scores,
    load_manifest,
    sample_frames,
    split_records,
    tier_for_bitrate,
    uniform_indices,
    write_manifest,
)
from nrvqa.errors import (
    CompositionError,
    DecodeError,
    LabelValidationError,
    ManifestParseError,
    MissingInputError,
    ScoreParseError,
)

HEADER = "# label_scale: vmaf_pseudo\n# tier_boundaries: 1000, 3000\nvideo_id,source_path,bitrate_kbps,bitrate_tier,label\n"


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def write_video(path, frames, size=(24, 32), fourcc="MJPG"):
    h, w = size
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*fourcc), 10.0, (w, h))
    for i in range(frames):
        img = np.full((h, w, 3), (i * 7) % 256, np.uint8)
        writer.write(img)
    writer.release()
    return path


class TestManifest:
    def test_three_rows(self, tmp_path):
        m = write(tmp_path / "m.csv", HEADER + "a,a.mp4,500,0,30\nb,b.mp4,2000,1,\nc,/abs/c.mp4,5000,2,90.5\n")
        recs = load_manifest(m)
        assert [r.video_id for r in recs] == ["a", "b", "c"]
        assert recs[0].source_path == tmp_path / "a.mp4"
        assert str(recs[2].source_path) == "/abs/c.mp4"
        assert recs[1].label is None and recs[2].label == 90.5
        assert [r.bitrate_tier for r in recs] == [0, 1, 2]

    def test_header_only(self, tmp_path):
        assert load_manifest(write(tmp_path / "m.csv", HEADER)) == []

    def test_label_above_vmaf_range(self, tmp_path):
        m = write(tmp_path / "m.csv", HEADER + "a,a.mp4,500,0,120\n")
        with pytest.raises(LabelValidationError, match="120"):
            load_manifest(m)

    def test_mos_scale_bounds(self, tmp_path):
        text = "# label_scale: mos\nvideo_id,source_path,bitrate_kbps,bitrate_tier,label\n"
        assert load_manifest(write(tmp_path / "ok.csv", text + "a,a.mp4,500,0,4.5\n"))[0].label_kind is LabelKind.MOS
        with pytest.raises(LabelValidationError):
            load_manifest(write(tmp_path / "bad.csv", text + "a,a.mp4,500,0,0.5\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingInputError):
            load_manifest(tmp_path / "nope.csv")
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "nope.csv")

    def test_malformed_row_names_row(self, tmp_path):
        m = write(tmp_path / "m.csv", HEADER + "a,a.mp4,500,0,30\nb,b.mp4,fast,0,30\n")
        with pytest.raises(ManifestParseError, match="row 2"):
            load_manifest(m)

    def test_wrong_field_count(self, tmp_path):
        m = write(tmp_path / "m.csv", HEADER + "a,a.mp4,500\n")
        with pytest.raises(ManifestParseError):
            load_manifest(m)

    def test_duplicate_ids(self, tmp_path):
        m = write(tmp_path / "m.csv", HEADER + "a,a.mp4,500,0,\na,b.mp4,600,0,\n")
        with pytest.raises(ManifestParseError, match="duplicate"):
            load_manifest(m)

    def test_tier_derived_and_checked(self, tmp_path):
        recs = load_manifest(write(tmp_path / "m.csv", HEADER + "a,a.mp4,3000,,\n"))
        assert recs[0].bitrate_tier == 2
        with pytest.raises(LabelValidationError, match="disagrees"):
            load_manifest(write(tmp_path / "bad.csv", HEADER + "a,a.mp4,3000,1,\n"))

    def test_json_manifest(self, tmp_path):
        doc = {"label_scale": "vmaf_pseudo", "tier_boundaries": [1000],
               "videos": [{"video_id": "a", "source_path": "a.mp4", "bitrate_kbps": 800, "label": 55.0},
                          {"video_id": "b", "source_path": "b.mp4", "bitrate_kbps": 1500}]}
        recs = load_manifest(write(tmp_path / "m.json", json.dumps(doc)))
        assert [(r.video_id, r.bitrate_tier, r.label) for r in recs] == [("a", 0, 55.0), ("b", 1, None)]

    def test_missing_columns(self, tmp_path):
        with pytest.raises(ManifestParseError, match="missing columns"):
            load_manifest(write(tmp_path / "m.csv", "video_id,source_path\n"))

    def test_roundtrip_writer(self, tmp_path):
        recs = [VideoRecord("a", tmp_path / "v" / "a.avi", 700, 0, 42.0),
                VideoRecord("b", tmp_path / "v" / "b.avi", 4000, 1)]
        back = load_manifest(write_manifest(tmp_path / "m.csv", recs, [1000]))
        assert back == recs

    def test_tier_function(self):
        assert [tier_for_bitrate(b, [1000, 3000]) for b in (1, 999, 1000, 2999, 3000, 10**6)] == [0, 0, 1, 1, 2, 2]


class TestIngest:
    def recs(self, tmp_path):
        return load_manifest(write(tmp_path / "m.csv", HEADER + "v1,a.mp4,500,0,\nv2,b.mp4,500,0,\n"))

    def test_assign_in_order(self, tmp_path):
        s = write(tmp_path / "s.json", json.dumps({"v2": 41.0, "v1": 93.2}))
        res = ingest_vmaf_scores(s, self.recs(tmp_path))
        assert [r.label for r in res.records] == [93.2, 41.0]
        assert all(r.label_kind is LabelKind.VMAF_PSEUDO for r in res.records)
        assert res.unlabeled == [] and res.unknown_ids == []

    def test_missing_score_flagged(self, tmp_path):
        s = write(tmp_path / "s.json", json.dumps({"v1": 93.2}))
        res = ingest_vmaf_scores(s, self.recs(tmp_path))
        assert len(res.records) == 2
        assert res.unlabeled == ["v2"] and res.records[1].label is None

    def test_unknown_id_reported(self, tmp_path):
        s = write(tmp_path / "s.json", json.dumps({"v1": 1.0, "v2": 2.0, "zz": 3.0}))
        assert ingest_vmaf_scores(s, self.recs(tmp_path)).unknown_ids == ["zz"]

    @pytest.mark.parametrize("bad", ['{"v1": "NaN"}', '{"v1": NaN}', '{"v1": "high"}', '{"v1": null}', '{"v1": true}'])
    def test_non_numeric_or_non_finite(self, tmp_path, bad):
        with pytest.raises(ScoreParseError):
            ingest_vmaf_scores(write(tmp_path / "s.json", bad), self.recs(tmp_path))

    def test_libvmaf_style_object(self, tmp_path):
        doc = {"v1": {"pooled_metrics": {"vmaf": {"mean": 77.5, "min": 60.0}}}, "v2": 12}
        res = ingest_vmaf_scores(write(tmp_path / "s.json", json.dumps(doc)), self.recs(tmp_path))
        assert [r.label for r in res.records] == [77.5, 12.0]

    def test_out_of_range_score(self, tmp_path):
        with pytest.raises(LabelValidationError):
            ingest_vmaf_scores(write(tmp_path / "s.json", '{"v1": 101}'), self.recs(tmp_path))

    @settings(max_examples=50, deadline=None)
    @given(st.dictionaries(st.sampled_from(["v1", "v2", "v3", "x"]), st.floats(0, 100), max_size=4))
    def test_count_preserved(self, tmp_path_factory, scores):
        d = tmp_path_factory.mktemp("ing")
        recs = load_manifest(write(d / "m.csv", HEADER + "v1,a,500,0,\nv2,b,500,0,5\nv3,c,500,0,\n"))
        res = ingest_vmaf_scores(write(d / "s.json", json.dumps(scores)), recs)
        assert len(res.records) == 3
        assert [r.video_id for r in res.records] == ["v1", "v2", "v3"]
        for before, after in zip(recs, res.records):
            assert (before.source_path, before.bitrate_kbps, before.bitrate_tier) == (
                after.source_path, after.bitrate_kbps, after.bitrate_tier)


class TestSampling:
    def test_uniform_indices_hand_case(self):
        assert uniform_indices(100, 10) == [0, 11, 22, 33, 44, 55, 66, 77, 88, 99]

    def test_round_half_up(self):
        # k * 3 / 2 for T=4, n=3 -> 0, 1.5, 3
        assert uniform_indices(4, 3) == [0, 2, 3]

    def test_identity_and_padding(self):
        assert uniform_indices(7, 7) == list(range(7))
        assert uniform_indices(1, 4) == [0, 0, 0, 0]
        assert uniform_indices(3, 5) == [0, 1, 2, 2, 2]

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 500), st.integers(1, 64))
    def test_indices_monotone_in_range(self, total, count):
        idx = uniform_indices(total, count)
        assert len(idx) == count
        assert all(0 <= i < total for i in idx)
        assert all(a <= b for a, b in zip(idx, idx[1:]))
        if total >= count > 1:
            assert idx[0] == 0 and idx[-1] == total - 1

    def test_decode_video(self, tmp_path):
        path = write_video(tmp_path / "v.avi", 20)
        rec = VideoRecord("v", path, 500, 0)
        frames = sample_frames(rec, 5, size=(16, 16))
        assert [f.frame_index for f in frames] == uniform_indices(20, 5)
        for f in frames:
            assert f.pixels.shape == (16, 16, 3) and f.pixels.dtype == np.float32
            assert np.isfinite(f.pixels).all() and f.pixels.min() >= 0 and f.pixels.max() <= 1
            assert not f.is_padding
        assert frames[1].timestamp_s == pytest.approx(frames[1].frame_index / 10.0)
        again = sample_frames(rec, 5, size=(16, 16))
        assert all(np.array_equal(a.pixels, b.pixels) for a, b in zip(frames, again))

    def test_short_video_padded(self, tmp_path):
        rec = VideoRecord("v", write_video(tmp_path / "one.avi", 1), 500, 0)
        frames = sample_frames(rec, 4)
        assert [f.frame_index for f in frames] == [0, 0, 0, 0]
        assert [f.is_padding for f in frames] == [False, True, True, True]
        assert all(np.array_equal(frames[0].pixels, f.pixels) for f in frames)

    def test_frame_count_equals_length(self, tmp_path):
        stack = np.stack([np.full((8, 8, 3), 10 * i, np.uint8) for i in range(6)])
        np.save(tmp_path / "s.npy", stack)
        frames = sample_frames(VideoRecord("s", tmp_path / "s.npy", 500, 0), 6)
        assert [f.frame_index for f in frames] == list(range(6))
        assert [round(float(f.pixels[0, 0, 0]) * 255) for f in frames] == [0, 10, 20, 30, 40, 50]

    def test_undecodable(self, tmp_path):
        bad = write(tmp_path / "bad.avi", "not a video")
        with pytest.raises(DecodeError):
            sample_frames(VideoRecord("bad", bad, 500, 0), 4)

    def test_missing_video(self, tmp_path):
        with pytest.raises(MissingInputError):
            sample_frames(VideoRecord("x", tmp_path / "x.avi", 500, 0), 4)

    def test_clip_loader_parallel_matches_serial(self, corpus12):
        recs = load_manifest(corpus12.manifest)
        serial = ClipLoader(4, (32, 32)).clips(recs)
        parallel = ClipLoader(4, (32, 32), workers=3).clips(recs)
        assert serial.shape == (12, 4, 32, 32, 3)
        assert np.array_equal(serial, parallel)


def tiered(counts):
    recs = []
    for tier, n in counts.items():
        recs += [VideoRecord(f"t{tier}_{i}", f"t{tier}_{i}.mp4", 100 * (tier + 1), tier) for i in range(n)]
    return recs


class TestBatches:
    def test_default_batch_layout(self):
        batch = build_contrastive_batch(tiered({0: 10, 1: 10}), 8, 0.5, rng_seed=3)
        assert [r.bitrate_tier for r in batch.records] == [0] * 4 + [1] * 4
        assert batch.group_a_tier == 0 and batch.group_b_tier == 1
        assert len(set(batch.video_ids)) == 8
        batch.validate(8)

    def test_single_tier(self):
        with pytest.raises(CompositionError):
            build_contrastive_batch(tiered({0: 10}), 4, 0.5, 0)

    def test_deficit_named(self):
        with pytest.raises(CompositionError, match="need 4 .* tier counts are"):
            build_contrastive_batch(tiered({0: 3, 1: 10}), 8, 0.5, 0)

    def test_deterministic(self):
        recs = tiered({0: 10, 1: 10, 2: 10})
        a = build_contrastive_batch(recs, 8, 0.5, 11)
        b = build_contrastive_batch(recs, 8, 0.5, 11)
        assert a.video_ids == b.video_ids

    def test_unequal_groups(self):
        batch = build_contrastive_batch(tiered({0: 2, 1: 6}), 8, 0.25, 0)
        assert [r.bitrate_tier for r in batch.records] == [0, 0] + [1] * 6

    def test_non_integral_group(self):
        with pytest.raises(CompositionError, match="not an integer"):
            build_contrastive_batch(tiered({0: 9, 1: 9}), 7, 0.5, 0)

    @settings(max_examples=150, deadline=None)
    @given(st.dictionaries(st.integers(0, 5), st.integers(0, 12), min_size=1, max_size=5),
           st.sampled_from([(4, 0.5), (8, 0.5), (8, 0.25), (6, 0.5)]), st.integers(0, 2**31))
    def test_structure_or_error(self, counts, shape, seed):
        N, p = shape
        n_a = int(N * p)
        recs = tiered(counts)
        tiers = sorted(t for t, n in counts.items() if n)
        feasible = any(counts[a] >= n_a and counts[b] >= N - n_a for a in tiers for b in tiers if a < b)
        if not feasible:
            with pytest.raises(CompositionError):
                build_contrastive_batch(recs, N, p, seed)
            return
        batch = build_contrastive_batch(recs, N, p, seed)
        batch.validate(N)
        assert batch.group_a_tier < batch.group_b_tier
        assert len(set(batch.video_ids)) == N


def test_split_is_stratified_and_disjoint():
    recs = tiered({0: 10, 1: 10})
    train, val = split_records(recs, 0.2, seed=4)
    assert len(train) == 16 and len(val) == 4
    assert sorted(r.bitrate_tier for r in val) == [0, 0, 1, 1]
    assert not {r.video_id for r in train} & {r.video_id for r in val}
    assert split_records(recs, 0.2, seed=4) == (train, val)
