import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigg import actionspace as acs
from sigg.errors import InputError, ParseError, RangeError, ValidationError


def make_dictionary(masks):
    return acs.ActionDictionary(entries=tuple(masks), coverage=0.9)


class TestBuildDictionary:
    def test_cumulative_threshold(self):
        # frequencies a:0.5 b:0.3 c:0.15 d:0.05 at coverage 0.9
        stream = [1] * 50 + [2] * 30 + [4] * 15 + [8] * 5
        d = acs.build_dictionary(stream, 0.9)
        assert d.entries == (1, 2, 4)
        assert d.n_actions == 4
        assert d.catch_all_id == 3
        assert d.encode(8) == d.catch_all_id

    def test_full_coverage_keeps_all_and_appends_catch_all(self):
        stream = [1] * 50 + [2] * 30 + [4] * 15 + [8] * 5
        d = acs.build_dictionary(stream, 1.0)
        assert d.entries == (1, 2, 4, 8)
        assert d.n_actions == 5
        # catch-all maps nothing: every seen mask encodes to itself
        assert all(d.encode(m) != d.catch_all_id for m in (1, 2, 4, 8))

    def test_fourteen_entry_dictionary(self):
        # corpus built so that 13 composites cover 90% and the rest spill
        # into the catch-all: 14 tokens total
        common = [0, 66, 64, 2, 16, 8, 4, 72, 24, 80, 90, 26, 10, 128]
        weights = [300, 200, 150, 100, 90, 80, 70, 60, 50, 40, 30, 25, 20, 15]
        rare = [255, 254, 253, 129]
        stream = []
        for m, w in zip(common[:13], weights[:13]):
            stream += [m] * w
        total_common = sum(weights[:13])
        n_rare = int(total_common / 0.9 * 0.095)
        for i, m in enumerate(rare):
            stream += [m] * (n_rare // len(rare))
        d = acs.build_dictionary(stream, 0.9)
        assert d.n_actions == 14
        assert acs.bitmask_to_label(d.entries[0]) == "no action"
        assert d.encode(0) == 0

    def test_tie_break_ascending_bitmask(self):
        stream = [7, 3, 3, 7, 5, 5]  # all frequency 2
        d = acs.build_dictionary(stream, 1.0)
        assert d.entries == (3, 5, 7)

    def test_empty_stream_raises(self):
        with pytest.raises(InputError):
            acs.build_dictionary([], 0.9)

    def test_bad_coverage_raises(self):
        with pytest.raises(RangeError):
            acs.build_dictionary([1], 0.0)
        with pytest.raises(RangeError):
            acs.build_dictionary([1], 1.5)

    @given(st.lists(st.integers(0, 255), min_size=1, max_size=300),
           st.floats(0.05, 1.0))
    @settings(max_examples=60, deadline=None)
    def test_coverage_property(self, stream, coverage):
        d = acs.build_dictionary(stream, coverage)
        total = len(stream)
        freq = {m: stream.count(m) / total for m in set(stream)}
        covered = sum(freq[m] for m in d.entries)
        assert covered >= coverage - 1e-9
        # minimality: dropping the last entry breaks coverage unless the
        # dictionary is a single entry
        if len(d.entries) > 1:
            assert covered - freq[d.entries[-1]] < coverage - 1e-9


class TestEncodeDecode:
    def test_round_trip_in_dictionary(self):
        d = make_dictionary([0, 66, 64])
        speaking = acs.bitmask_from_names(["speaking"])
        assert d.decode(d.encode(speaking)) == speaking
        assert acs.bitmask_to_label(speaking) == "speaking"

    def test_rare_combo_goes_to_catch_all(self):
        d = make_dictionary([0, 66, 64])
        assert d.encode(255) == d.catch_all_id
        assert d.label(d.catch_all_id) == acs.CATCH_ALL_LABEL

    def test_empty_bitmask_is_no_action(self):
        d = make_dictionary([0, 66, 64])
        assert d.encode(0) == 0
        assert d.label(0) == "no action"

    def test_decode_out_of_range(self):
        d = make_dictionary([0, 66])
        with pytest.raises(RangeError):
            d.decode(3)
        with pytest.raises(RangeError):
            d.decode(-1)

    @given(st.integers(0, 255))
    @settings(max_examples=40, deadline=None)
    def test_encode_total_and_identity_on_entries(self, mask):
        d = make_dictionary([0, 66, 64, 2])
        token = d.encode(mask)  # never raises
        assert 0 <= token < d.n_actions
        if mask in d.entries:
            assert d.decode(token) == mask


def write_annotations(path, frames):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in frames:
            fh.write(json.dumps(rec) + "\n")


def frame(group, num, persons):
    return {"group": group, "frame": num,
            "persons": [{"id": pid, "actions": bits, "occlusion": occ}
                        for pid, bits, occ in persons]}


def bits_of(mask):
    return [(mask >> i) & 1 for i in range(8)]


class TestSegmentation:
    def make_groups(self, n_frames, occlusion_frames=(), n_persons=2):
        frames = []
        for t in range(n_frames):
            occ = "total" if t in occlusion_frames else "none"
            persons = [(f"p{i}", bits_of(i % 2), occ) for i in range(n_persons)]
            frames.append(frame("g0", t, persons))
        return frames

    def test_t_obs_from_fps(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        write_annotations(path, self.make_groups(120))
        groups = acs.read_annotations(path)
        d = acs.build_dictionary([0, 1], 1.0)
        samples = acs.segment_annotations(groups, d, fps=20, seg_seconds=3,
                                          horizon=40, occlusion_max=0.1)
        assert len(samples) == 1
        assert samples[0].t_obs == 60
        assert samples[0].horizon == 40

    def test_occlusion_drop(self, tmp_path):
        # 11% of person-frames totally occluded -> dropped at 0.10
        path = tmp_path / "ann.jsonl"
        occluded = tuple(range(11))  # 11 frames of 100, both persons
        write_annotations(path, self.make_groups(100, occluded))
        groups = acs.read_annotations(path)
        d = acs.build_dictionary([0, 1], 1.0)
        samples = acs.segment_annotations(groups, d, fps=20, seg_seconds=3,
                                          horizon=40, occlusion_max=0.10)
        assert samples == []
        samples = acs.segment_annotations(groups, d, fps=20, seg_seconds=3,
                                          horizon=40, occlusion_max=0.12)
        assert len(samples) == 1

    def test_short_stream_gives_no_samples(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        write_annotations(path, self.make_groups(99))
        groups = acs.read_annotations(path)
        d = acs.build_dictionary([0, 1], 1.0)
        samples = acs.segment_annotations(groups, d, fps=20, seg_seconds=3,
                                          horizon=40, occlusion_max=1.0)
        assert samples == []

    def test_non_overlapping_windows(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        write_annotations(path, self.make_groups(250))
        groups = acs.read_annotations(path)
        d = acs.build_dictionary([0, 1], 1.0)
        samples = acs.segment_annotations(groups, d, fps=10, seg_seconds=3,
                                          horizon=20, occlusion_max=1.0)
        assert len(samples) == 5  # 250 // (30 + 20)
        spans = []
        for s in samples:
            start = int(s.sample_id.split(":")[1])
            spans.append(range(start, start + s.t_obs + s.horizon))
        for i, a in enumerate(spans):
            for b in spans[i + 1:]:
                assert set(a).isdisjoint(b)

    def test_inconsistent_person_count(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        frames = self.make_groups(4)
        frames[2]["persons"] = frames[2]["persons"][:1]
        write_annotations(path, frames)
        with pytest.raises(InputError):
            acs.read_annotations(path)

    def test_fractional_t_obs_rejected(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        write_annotations(path, self.make_groups(10))
        groups = acs.read_annotations(path)
        d = acs.build_dictionary([0, 1], 1.0)
        with pytest.raises(InputError):
            acs.segment_annotations(groups, d, fps=7, seg_seconds=0.5,
                                    horizon=4, occlusion_max=0.1)


class TestDatasetIO:
    def sample(self, sid="s0"):
        tokens = np.arange(12).reshape(2, 6) % 5
        return acs.Interaction(persons=2, t_obs=4, horizon=2, tokens=tokens,
                               sample_id=sid)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("")
        assert acs.read_dataset(path) == []

    def test_round_trip_preserves_tokens(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = []
        for i in range(600):
            tokens = rng.integers(14, size=(3, 10))
            samples.append(acs.Interaction(persons=3, t_obs=6, horizon=4,
                                           tokens=tokens, sample_id=f"s{i}"))
        path = tmp_path / "d.jsonl"
        acs.write_dataset(path, samples)
        loaded = acs.read_dataset(path, n_actions=14)
        assert len(loaded) == 600
        for a, b in zip(samples, loaded):
            assert (a.tokens == b.tokens).all()
            assert a.sample_id == b.sample_id

    def test_out_of_range_token(self, tmp_path):
        path = tmp_path / "d.jsonl"
        s = self.sample()
        s.tokens[0, 0] = 14
        acs.write_dataset(path, [s])
        with pytest.raises(ValidationError):
            acs.read_dataset(path, n_actions=14)

    def test_malformed_line_names_lineno(self, tmp_path):
        path = tmp_path / "d.jsonl"
        acs.write_dataset(path, [self.sample()])
        with path.open("a") as fh:
            fh.write("{not json\n")
        with pytest.raises(ParseError, match=":2"):
            acs.read_dataset(path)

    def test_invariant_violations(self):
        with pytest.raises(ValidationError):
            acs.Interaction(persons=1, t_obs=4, horizon=2,
                            tokens=np.zeros((1, 6), dtype=int))
        with pytest.raises(ValidationError):
            acs.Interaction(persons=2, t_obs=4, horizon=2,
                            tokens=np.zeros((2, 5), dtype=int))

    def test_dictionary_round_trip(self, tmp_path):
        d = acs.build_dictionary([0, 0, 66, 64, 3], 0.9)
        path = tmp_path / "dict.json"
        acs.save_dictionary(path, d)
        loaded = acs.load_dictionary(path)
        assert loaded.entries == d.entries
        assert loaded.coverage == d.coverage

    def test_duplicate_entries_rejected(self, tmp_path):
        path = tmp_path / "dict.json"
        path.write_text(json.dumps({"entries": [[0], [0]], "coverage": 0.9}))
        with pytest.raises(ValidationError):
            acs.load_dictionary(path)
