import itertools
import json

import numpy as np
import pytest

from ieegtopo.ingest import (
    ChannelSelection,
    Dataset,
    EdfHeaderError,
    EdfScalingError,
    EdfTruncatedError,
    Recording,
    Segment,
    SegmentLabel,
    SegmentSet,
    SynthConfig,
    load_manifest,
    parse_edf,
    select_common_channels,
    synth_dataset,
    write_edf,
    write_manifest,
    write_synth_dataset,
)


def build_edf(
    data,
    physical_range=(-100.0, 100.0),
    digital_range=(-32768, 32767),
    sample_rate=100.0,
    channels=None,
):
    """Hand-construct an EDF fixture from raw digital int16 values."""
    data = np.asarray(data, dtype="<i2")
    n_channels, n_samples = data.shape
    channels = channels or [f"EEG C{i}" for i in range(n_channels)]
    pmin, pmax = physical_range
    dmin, dmax = digital_range
    scale = (pmax - pmin) / (dmax - dmin)
    physical = data * scale + (pmin - scale * dmin)
    rec = Recording("fixture", sample_rate, channels, physical)
    return write_edf(rec, physical_range=physical_range, digital_range=digital_range)


# ---------------------------------------------------------------------------
# EDF parsing
# ---------------------------------------------------------------------------

class TestParseEdf:
    def test_digital_zero_maps_near_physical_zero(self):
        # linear map computed independently: scale = 200/65535,
        # phys(0) = -100 + scale * 32768 = 0.001525902189669...
        raw = build_edf([[0, 100, -100, 32767]])
        rec = parse_edf(raw)
        expected = -100.0 + (200.0 / 65535.0) * 32768.0
        assert abs(rec.data[0, 0] - expected) < 1e-12
        assert abs(rec.data[0, 0] - 0.0015259) < 1e-6

    def test_digital_max_maps_to_physical_max(self):
        raw = build_edf([[32767, 0]])
        rec = parse_edf(raw)
        assert rec.data[0, 0] == pytest.approx(100.0, abs=1e-12)

    def test_zero_signals_rejected(self):
        raw = bytearray(build_edf([[1, 2]]))
        raw[252:256] = b"0   "
        with pytest.raises(EdfHeaderError, match="number of signals"):
            parse_edf(bytes(raw))

    def test_malformed_header_field_named(self):
        raw = bytearray(build_edf([[1, 2]]))
        raw[236:244] = b"oops    "  # number of data records
        with pytest.raises(EdfHeaderError, match="number of data records"):
            parse_edf(bytes(raw))

    def test_degenerate_digital_range_is_scaling_error(self):
        raw = bytearray(build_edf([[1, 2]]))
        # per-signal digital min block sits at offset 256 + 120 * ns for ns=1
        raw[256 + 120 : 256 + 128] = b"5       "
        raw[256 + 128 : 256 + 136] = b"5       "
        with pytest.raises(EdfScalingError, match="digital min"):
            parse_edf(bytes(raw))

    def test_truncated_data_records_report_counts(self):
        raw = build_edf([[1, 2, 3, 4]])
        with pytest.raises(EdfTruncatedError, match="expected 8 bytes, got 6"):
            parse_edf(raw[:-2])

    def test_channel_order_preserved(self):
        raw = build_edf(np.array([[1, 2], [3, 4], [5, 6]]), channels=["Z", "A", "M"])
        assert parse_edf(raw).channels == ["Z", "A", "M"]

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(5)
        digital = rng.integers(-32768, 32768, size=(3, 200), dtype=np.int16)
        raw = build_edf(digital, sample_rate=100.0)
        rec = parse_edf(raw)
        raw2 = write_edf(rec, physical_range=(-100.0, 100.0))
        assert raw == raw2  # header and data region both

    def test_scaling_matches_linear_map_everywhere(self):
        rng = np.random.default_rng(6)
        digital = rng.integers(-32768, 32768, size=(2, 50), dtype=np.int16)
        rec = parse_edf(build_edf(digital, physical_range=(-200.0, 200.0)))
        scale = 400.0 / 65535.0
        expected = digital * scale + (-200.0 - scale * -32768)
        np.testing.assert_allclose(rec.data, expected, atol=1e-12)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

class TestManifest:
    def write_fixture(self, tmp_path, n_files=2, n_segments=3):
        entries = []
        for i in range(n_files):
            rec = Recording(
                f"p{i}", 100.0, ["C1", "C2"], np.zeros((2, 400)) + i
            )
            name = f"rec{i}.edf"
            write_edf(rec, tmp_path / name)
            entries.append(
                {
                    "path": name,
                    "patient_id": f"p{i}",
                    "segments": [
                        {"start_sample": 100 * k, "length": 100, "label": "ictal"}
                        for k in range(n_segments)
                    ],
                }
            )
        path = tmp_path / "manifest.json"
        write_manifest(path, entries)
        return path

    def test_counts(self, tmp_path):
        path = self.write_fixture(tmp_path, n_files=2, n_segments=3)
        recordings, segments = load_manifest(path)
        assert len(recordings) == 2
        assert len(segments) == 6

    def test_case_insensitive_labels(self, tmp_path):
        path = self.write_fixture(tmp_path, n_files=1, n_segments=1)
        doc = json.loads(path.read_text())
        doc["recordings"][0]["segments"][0]["label"] = "IcTaL"
        path.write_text(json.dumps(doc))
        _, segments = load_manifest(path)
        assert segments.segments[0].label == SegmentLabel.ICTAL

    def test_unknown_label_rejected(self, tmp_path):
        path = self.write_fixture(tmp_path, n_files=1, n_segments=1)
        doc = json.loads(path.read_text())
        doc["recordings"][0]["segments"][0]["label"] = "asleep"
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="asleep"):
            load_manifest(path)

    def test_window_beyond_recording_rejected(self, tmp_path):
        path = self.write_fixture(tmp_path, n_files=1, n_segments=1)
        doc = json.loads(path.read_text())
        doc["recordings"][0]["segments"][0]["start_sample"] = 350
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="exceeds recording length"):
            load_manifest(path)

    def test_missing_file_rejected(self, tmp_path):
        path = self.write_fixture(tmp_path, n_files=1, n_segments=1)
        doc = json.loads(path.read_text())
        doc["recordings"][0]["path"] = "nope.edf"
        path.write_text(json.dumps(doc))
        with pytest.raises(FileNotFoundError, match="nope.edf"):
            load_manifest(path)


# ---------------------------------------------------------------------------
# Synthetic datasets
# ---------------------------------------------------------------------------

class TestSynth:
    def test_deterministic_for_fixed_seed(self):
        a_recs, a_segs = synth_dataset(SynthConfig(seed=7))
        b_recs, b_segs = synth_dataset(SynthConfig(seed=7))
        assert np.array_equal(a_recs[0].data, b_recs[0].data)
        assert a_segs.segments == b_segs.segments

    def test_different_seeds_differ(self):
        a, _ = synth_dataset(SynthConfig(seed=7))
        b, _ = synth_dataset(SynthConfig(seed=8))
        assert not np.array_equal(a[0].data, b[0].data)

    def test_segment_counts(self):
        _, segs = synth_dataset(SynthConfig(n_per_class=10))
        assert len(segs) == 30
        assert np.bincount(segs.labels()).tolist() == [10, 10, 10]

    def test_ictal_amplitude_contract(self, default_dataset):
        # generator contract: ictal mean peak-to-peak > 3x interictal
        ptp = {0: [], 1: [], 2: []}
        for i, seg in enumerate(default_dataset.segments):
            ptp[int(seg.label)].append(np.ptp(default_dataset.segment_data(i), axis=1).mean())
        assert np.mean(ptp[2]) > 3.0 * np.mean(ptp[0])

    def test_written_dataset_loads_back(self, tmp_path):
        manifest = write_synth_dataset(tmp_path, SynthConfig(seed=3, n_per_class=2, length=256))
        recordings, segments = load_manifest(manifest)
        source_recs, source_segs = synth_dataset(SynthConfig(seed=3, n_per_class=2, length=256))
        assert len(segments) == len(source_segs)
        # quantized to int16, so equality holds to the digital step
        span = np.ceil(max(np.abs(source_recs[0].data).max(), 1.0))
        step = 2 * span / 65535
        assert np.max(np.abs(recordings[0].data - source_recs[0].data)) <= step

    def test_write_twice_identical(self, tmp_path):
        cfg = SynthConfig(seed=9, n_per_class=2, length=256)
        write_synth_dataset(tmp_path / "a", cfg)
        write_synth_dataset(tmp_path / "b", cfg)
        for name in ("manifest.json", "synth-000.edf"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            SynthConfig(n_per_class=0)


# ---------------------------------------------------------------------------
# Common-channel selection
# ---------------------------------------------------------------------------

def make_recording(channels, n_samples=64):
    return Recording("p", 100.0, list(channels), np.zeros((len(channels), n_samples)))


def exhaustive_best(recordings, counts):
    """Brute-force oracle over all nonempty recording subsets."""
    best = -1
    for r in range(1, len(recordings) + 1):
        for ids in itertools.combinations(range(len(recordings)), r):
            common = set(recordings[ids[0]].channels)
            for i in ids[1:]:
                common &= set(recordings[i].channels)
            score = sum(counts[i] for i in ids) * len(common)
            best = max(best, score)
    return best


class TestSelectCommonChannels:
    def test_identical_channel_sets_all_retained(self):
        recs = [make_recording(["A", "B", "C"]) for _ in range(3)]
        sel = select_common_channels(recs, [1, 1, 1])
        assert sorted(sel.retained) == [0, 1, 2]
        assert sel.channels == ["A", "B", "C"]
        assert sel.warning is None

    def test_single_recording_keeps_full_channel_set(self):
        sel = select_common_channels([make_recording(["B", "A"])])
        assert sel.retained == [0]
        assert sel.channels == ["A", "B"]

    def test_outlier_recording_dropped(self):
        # A, B share 10 channels with 10 segments each; C shares only 2 and
        # has 5 segments. Exhaustive oracle on this toy instance keeps {A, B}.
        shared = [f"ch{i}" for i in range(10)]
        a = make_recording(shared)
        b = make_recording(shared)
        c = make_recording(shared[:2] + ["x1", "x2"])
        counts = [10, 10, 5]
        sel = select_common_channels([a, b, c], counts)
        assert sorted(sel.retained) == [0, 1]
        assert len(sel.channels) == 10
        assert sel.objective == exhaustive_best([a, b, c], counts) == 200

    def test_subset_of_every_retained_recording(self, rng):
        recs, counts = self.random_instance(rng, 5)
        sel = select_common_channels(recs, counts)
        for i in sel.retained:
            assert set(sel.channels) <= set(recs[i].channels)

    def test_empty_intersection_falls_back_with_warning(self):
        recs = [make_recording(["A"]), make_recording(["B"]), make_recording(["C", "D"])]
        sel = select_common_channels(recs, [1, 1, 1])
        assert sel.warning is not None
        assert len(sel.retained) == 1

    @staticmethod
    def random_instance(rng, n_recordings):
        pool = [f"ch{i}" for i in range(12)]
        recs = []
        for _ in range(n_recordings):
            k = rng.integers(4, 11)
            chans = rng.choice(pool, size=k, replace=False).tolist()
            recs.append(make_recording(chans))
        counts = rng.integers(1, 20, size=n_recordings).tolist()
        return recs, counts

    def test_greedy_within_90_percent_of_exhaustive(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            n = int(rng.integers(2, 7))
            recs, counts = self.random_instance(rng, n)
            sel = select_common_channels(recs, counts)
            optimum = exhaustive_best(recs, counts)
            assert sel.objective >= 0.9 * optimum


# ---------------------------------------------------------------------------
# Segment bookkeeping
# ---------------------------------------------------------------------------

def test_segment_validation():
    rec = make_recording(["A", "B"], n_samples=100)
    good = SegmentSet([Segment(0, 0, 100, SegmentLabel.ICTAL)])
    good.validate([rec])
    bad = SegmentSet([Segment(0, 50, 100, SegmentLabel.ICTAL)])
    with pytest.raises(ValueError, match="exceeds recording length"):
        bad.validate([rec])
    with pytest.raises(ValueError):
        Segment(0, 0, 0, SegmentLabel.ICTAL)


def test_dataset_accessor(default_dataset):
    seg = default_dataset.segments.segments[3]
    block = default_dataset.segment_data(3)
    assert block.shape == (4, seg.length)


def test_recording_invariants():
    with pytest.raises(ValueError, match="unique"):
        Recording("p", 100.0, ["A", "A"], np.zeros((2, 10)))
    with pytest.raises(ValueError, match="positive"):
        Recording("p", 0.0, ["A"], np.zeros((1, 10)))
    with pytest.raises(ValueError, match="does not match"):
        Recording("p", 1.0, ["A"], np.zeros((2, 10)))
