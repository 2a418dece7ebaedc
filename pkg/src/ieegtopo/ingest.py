"""Dataset ingestion: EDF parsing, label manifests, synthetic data, channel subsetting.

EDF layout handled here is the classic one: a 256-byte ASCII header, one
256-byte ASCII block per signal (fields grouped by kind, not by signal), then
little-endian 16-bit data records. Samples are converted to physical units
with the per-signal linear map defined by the physical/digital min/max
fields. EDF+ annotation channels are skipped; labels live in the manifest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Sequence

import numpy as np

ANNOTATION_LABEL = "EDF Annotations"


class EdfError(ValueError):
    """Base class for EDF ingestion failures."""


class EdfHeaderError(EdfError):
    """Malformed header; the message names the offending field."""


class EdfScalingError(EdfError):
    """Digital range is degenerate, the linear map is undefined."""


class EdfTruncatedError(EdfError):
    """Data region shorter than the header promises."""


class SegmentLabel(IntEnum):
    INTERICTAL = 0
    PREICTAL = 1
    ICTAL = 2

    @staticmethod
    def from_string(name: str) -> "SegmentLabel":
        try:
            return SegmentLabel[name.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown segment label {name!r}") from None


@dataclass
class Recording:
    """One multichannel recording in physical units (microvolts)."""

    patient_id: str
    sample_rate: float
    channels: list[str]
    data: np.ndarray  # (n_channels, n_samples) float64

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[0] != len(self.channels):
            raise ValueError(
                f"data shape {self.data.shape} does not match {len(self.channels)} channels"
            )
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("channel names must be unique")
        if not self.sample_rate > 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Segment:
    """A labeled window into one recording of a dataset."""

    recording: int
    start: int
    length: int
    label: SegmentLabel

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("segment length must be positive")
        if self.start < 0:
            raise ValueError("segment start must be nonnegative")


@dataclass
class SegmentSet:
    segments: list[Segment]

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def labels(self) -> np.ndarray:
        return np.array([int(s.label) for s in self.segments])

    def validate(self, recordings: Sequence[Recording]) -> None:
        for i, seg in enumerate(self.segments):
            if not 0 <= seg.recording < len(recordings):
                raise ValueError(f"segment {i} references missing recording {seg.recording}")
            n = recordings[seg.recording].n_samples
            if seg.start + seg.length > n:
                raise ValueError(
                    f"segment {i} window [{seg.start}, {seg.start + seg.length}) "
                    f"exceeds recording length {n}"
                )


@dataclass
class Dataset:
    """Recordings plus their labeled segments; the unit the pipelines consume."""

    recordings: list[Recording]
    segments: SegmentSet

    def __post_init__(self):
        self.segments.validate(self.recordings)

    def segment_data(self, index: int) -> np.ndarray:
        seg = self.segments.segments[index]
        rec = self.recordings[seg.recording]
        return rec.data[:, seg.start : seg.start + seg.length]

    def labels(self) -> np.ndarray:
        return self.segments.labels()


# ---------------------------------------------------------------------------
# EDF parsing
# ---------------------------------------------------------------------------

def _ascii_field(raw: bytes, name: str) -> str:
    try:
        return raw.decode("ascii").strip()
    except UnicodeDecodeError:
        raise EdfHeaderError(f"field {name!r} is not ASCII: {raw!r}") from None


def _int_field(raw: bytes, name: str) -> int:
    text = _ascii_field(raw, name)
    try:
        return int(text)
    except ValueError:
        raise EdfHeaderError(f"field {name!r} is not an integer: {text!r}") from None


def _float_field(raw: bytes, name: str) -> float:
    text = _ascii_field(raw, name)
    try:
        return float(text)
    except ValueError:
        raise EdfHeaderError(f"field {name!r} is not a number: {text!r}") from None


def parse_edf(data: bytes) -> Recording:
    """Parse EDF bytes into a :class:`Recording` in physical units.

    Raises :class:`EdfHeaderError` naming the malformed field,
    :class:`EdfScalingError` when digital min equals digital max, and
    :class:`EdfTruncatedError` with expected/actual byte counts when the
    data region is short.
    """
    if len(data) < 256:
        raise EdfHeaderError(f"file too short for the 256-byte header: {len(data)} bytes")

    patient_id = _ascii_field(data[8:88], "patient identification")
    n_records = _int_field(data[236:244], "number of data records")
    record_duration = _float_field(data[244:252], "duration of a data record")
    ns = _int_field(data[252:256], "number of signals")
    if ns <= 0:
        raise EdfHeaderError(f"field 'number of signals' must be positive, got {ns}")
    if n_records < 0:
        raise EdfHeaderError(f"field 'number of data records' must be nonnegative, got {n_records}")
    if record_duration <= 0:
        raise EdfHeaderError(
            f"field 'duration of a data record' must be positive, got {record_duration}"
        )

    header_bytes = 256 + ns * 256
    if len(data) < header_bytes:
        raise EdfHeaderError(
            f"file too short for {ns} signal header blocks: "
            f"need {header_bytes} bytes, have {len(data)}"
        )

    def signal_fields(offset, width, parse, name):
        out = []
        for s in range(ns):
            lo = 256 + offset * ns + s * width
            out.append(parse(data[lo : lo + width], f"{name}[{s}]"))
        return out

    labels = signal_fields(0, 16, _ascii_field, "label")
    # transducer (80) and physical dimension (8) are skipped: offsets 16, 96
    phys_min = signal_fields(104, 8, _float_field, "physical minimum")
    phys_max = signal_fields(112, 8, _float_field, "physical maximum")
    dig_min = signal_fields(120, 8, _int_field, "digital minimum")
    dig_max = signal_fields(128, 8, _int_field, "digital maximum")
    # prefiltering (80) skipped: offset 136
    spr = signal_fields(216, 8, _int_field, "samples per record")

    keep = [s for s in range(ns) if labels[s] != ANNOTATION_LABEL]
    if not keep:
        raise EdfHeaderError("no signal channels (annotation channels only)")
    for s in keep:
        if spr[s] <= 0:
            raise EdfHeaderError(f"field 'samples per record[{s}]' must be positive, got {spr[s]}")
        if dig_min[s] == dig_max[s]:
            raise EdfScalingError(
                f"signal {labels[s]!r}: digital min equals digital max ({dig_min[s]})"
            )
    if len({spr[s] for s in keep}) != 1:
        raise EdfError(f"channels have differing samples per record: {[spr[s] for s in keep]}")
    if len(set(labels[s] for s in keep)) != len(keep):
        raise EdfError("duplicate channel labels")

    record_width = sum(spr) * 2
    expected = n_records * record_width
    body = data[header_bytes:]
    if len(body) < expected:
        raise EdfTruncatedError(
            f"truncated data records: expected {expected} bytes, got {len(body)}"
        )

    raw = np.frombuffer(body[:expected], dtype="<i2")
    n_samples = n_records * spr[keep[0]]
    out = np.empty((len(keep), n_samples), dtype=float)
    # per-signal linear map digital -> physical
    scale = {s: (phys_max[s] - phys_min[s]) / (dig_max[s] - dig_min[s]) for s in keep}
    offset = {s: phys_min[s] - scale[s] * dig_min[s] for s in keep}

    starts = np.cumsum([0] + spr[:-1])
    for row, s in enumerate(keep):
        per_record = np.empty((n_records, spr[s]), dtype="<i2")
        for r in range(n_records):
            lo = r * (record_width // 2) + starts[s]
            per_record[r] = raw[lo : lo + spr[s]]
        out[row] = per_record.reshape(-1) * scale[s] + offset[s]

    sample_rate = spr[keep[0]] / record_duration
    return Recording(
        patient_id=patient_id or "unknown",
        sample_rate=sample_rate,
        channels=[labels[s] for s in keep],
        data=out,
    )


def read_edf(path) -> Recording:
    return parse_edf(Path(path).read_bytes())


def _fixed(text: str, width: int, name: str) -> bytes:
    raw = text.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"EDF field {name!r} does not fit in {width} bytes: {text!r}")
    return raw.ljust(width)


def _format_number(x: float, width: int, name: str) -> bytes:
    # shortest exact decimal repr that still round-trips through float()
    for fmt in ("%g", "%.10g", "%.17g"):
        text = fmt % x
        if len(text) <= width and float(text) == x:
            return _fixed(text, width, name)
    raise ValueError(f"value {x!r} for field {name!r} does not fit in {width} bytes exactly")


def write_edf(
    recording: Recording,
    path=None,
    physical_range: tuple[float, float] | None = None,
    digital_range: tuple[int, int] = (-32768, 32767),
    samples_per_record: int | None = None,
) -> bytes:
    """Serialize a recording as EDF; fixture-grade, quantizing to int16.

    The physical range defaults to a symmetric span covering the data so the
    linear map is exact in float64 and parse/serialize round trips are
    bit-identical in the data region. Start date/time are fixed constants to
    keep output byte-deterministic.
    """
    n_channels, n_samples = recording.data.shape
    if samples_per_record is None:
        fs = recording.sample_rate
        if fs == int(fs) and n_samples % int(fs) == 0:
            samples_per_record = int(fs)
        else:
            samples_per_record = n_samples
    if n_samples % samples_per_record != 0:
        raise ValueError(
            f"samples per record {samples_per_record} does not divide {n_samples} samples"
        )
    n_records = n_samples // samples_per_record
    record_duration = samples_per_record / recording.sample_rate

    dmin, dmax = digital_range
    if dmin >= dmax:
        raise ValueError("digital range must be increasing")
    if physical_range is None:
        span = float(np.max(np.abs(recording.data))) if recording.data.size else 1.0
        # integer span: exactly representable in the 8-byte ASCII field
        span = float(math.ceil(max(span, 1.0)))
        physical_range = (-span, span)
    pmin, pmax = physical_range
    if not pmin < pmax:
        raise ValueError("physical range must be increasing")

    scale = (pmax - pmin) / (dmax - dmin)
    offset = pmin - scale * dmin
    digital = np.round((recording.data - offset) / scale)
    if digital.min() < dmin or digital.max() > dmax:
        raise ValueError("data exceeds the physical range; widen physical_range")
    digital = digital.astype("<i2")

    head = b"".join(
        [
            _fixed("0", 8, "version"),
            _fixed(recording.patient_id, 80, "patient identification"),
            _fixed("synthetic recording", 80, "recording identification"),
            _fixed("01.01.00", 8, "start date"),
            _fixed("00.00.00", 8, "start time"),
            _fixed(str(256 + n_channels * 256), 8, "header bytes"),
            _fixed("", 44, "reserved"),
            _fixed(str(n_records), 8, "number of data records"),
            _format_number(record_duration, 8, "duration of a data record"),
            _fixed(str(n_channels), 4, "number of signals"),
        ]
    )

    def block(width, values, name):
        return b"".join(_fixed(v, width, name) for v in values)

    per_signal = b"".join(
        [
            block(16, recording.channels, "label"),
            block(80, [""] * n_channels, "transducer"),
            block(8, ["uV"] * n_channels, "physical dimension"),
            b"".join(_format_number(pmin, 8, "physical minimum") for _ in range(n_channels)),
            b"".join(_format_number(pmax, 8, "physical maximum") for _ in range(n_channels)),
            block(8, [str(dmin)] * n_channels, "digital minimum"),
            block(8, [str(dmax)] * n_channels, "digital maximum"),
            block(80, [""] * n_channels, "prefiltering"),
            block(8, [str(samples_per_record)] * n_channels, "samples per record"),
            block(32, [""] * n_channels, "reserved"),
        ]
    )

    records = []
    for r in range(n_records):
        lo = r * samples_per_record
        for c in range(n_channels):
            records.append(digital[c, lo : lo + samples_per_record].tobytes())
    payload = head + per_signal + b"".join(records)
    if path is not None:
        Path(path).write_bytes(payload)
    return payload


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def load_manifest(path) -> tuple[list[Recording], SegmentSet]:
    """Load the JSON manifest and every recording it references.

    Schema: ``{"recordings": [{"path", "patient_id", "segments":
    [{"start_sample", "length", "label"}]}]}``. Paths resolve relative to the
    manifest's directory.
    """
    path = Path(path)
    manifest = json.loads(path.read_text())
    recordings: list[Recording] = []
    segments: list[Segment] = []
    for entry in manifest["recordings"]:
        rec_path = Path(entry["path"])
        if not rec_path.is_absolute():
            rec_path = path.parent / rec_path
        if not rec_path.exists():
            raise FileNotFoundError(f"manifest references missing file: {rec_path}")
        rec = read_edf(rec_path)
        if entry.get("patient_id"):
            rec.patient_id = entry["patient_id"]
        idx = len(recordings)
        recordings.append(rec)
        for win in entry.get("segments", []):
            segments.append(
                Segment(
                    recording=idx,
                    start=int(win["start_sample"]),
                    length=int(win["length"]),
                    label=SegmentLabel.from_string(win["label"]),
                )
            )
    segset = SegmentSet(segments)
    segset.validate(recordings)
    return recordings, segset


def write_manifest(path, entries: list[dict]) -> None:
    Path(path).write_text(json.dumps({"recordings": entries}, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Desk-scale synthetic dataset: one recording, three distinct dynamics."""

    n_per_class: int = 10
    channels: int = 4
    length: int = 1024
    sample_rate: float = 256.0
    seed: int = 7

    def __post_init__(self):
        if min(self.n_per_class, self.channels, self.length) <= 0 or self.sample_rate <= 0:
            raise ValueError("all synthetic dataset counts must be positive")


def _colored_noise(rng: np.random.Generator, n: int, phi: float = 0.7) -> np.ndarray:
    white = rng.standard_normal(n + 200)
    out = np.empty_like(white)
    out[0] = white[0]
    for i in range(1, len(white)):
        out[i] = phi * out[i - 1] + white[i]
    out = out[200:]
    return out / np.std(out)


def _synth_source(rng: np.random.Generator, label: SegmentLabel, n: int, fs: float) -> np.ndarray:
    t = np.arange(n) / fs
    noise = _colored_noise(rng, n)
    if label == SegmentLabel.INTERICTAL:
        return noise
    if label == SegmentLabel.PREICTAL:
        f = rng.uniform(8.0, 13.0)
        phase = rng.uniform(0, 2 * np.pi)
        return noise + 5.0 * np.sin(2 * np.pi * f * t + phase)
    # ictal: high-amplitude 3-5 Hz rhythmic bursts
    f = rng.uniform(3.0, 5.0)
    phase = rng.uniform(0, 2 * np.pi)
    envelope = 0.5 + 0.5 * np.sin(2 * np.pi * 0.5 * t + rng.uniform(0, 2 * np.pi)) ** 2
    return 0.5 * noise + 12.0 * envelope * np.sin(2 * np.pi * f * t + phase)


def synth_dataset(config: SynthConfig | None = None) -> tuple[list[Recording], SegmentSet]:
    """Generate one labeled recording with class-distinct dynamics.

    Deterministic for a fixed config. Interictal windows are low-amplitude
    colored noise, preictal adds a weak alpha-range oscillation, ictal is
    high-amplitude slow rhythmic bursting, so sublevel lifetimes separate the
    classes by construction.
    """
    config = config or SynthConfig()
    rng = np.random.default_rng(config.seed)
    order = [SegmentLabel(i % 3) for i in range(3 * config.n_per_class)]
    mix = rng.uniform(0.8, 1.2, size=config.channels)

    blocks = []
    segments = []
    for k, label in enumerate(order):
        source = _synth_source(rng, label, config.length, config.sample_rate)
        chan_noise = 0.3 * rng.standard_normal((config.channels, config.length))
        blocks.append(mix[:, None] * source[None, :] + chan_noise)
        segments.append(
            Segment(recording=0, start=k * config.length, length=config.length, label=label)
        )

    rec = Recording(
        patient_id="synth-000",
        sample_rate=config.sample_rate,
        channels=[f"CH{c:02d}" for c in range(config.channels)],
        data=np.concatenate(blocks, axis=1),
    )
    return [rec], SegmentSet(segments)


def write_synth_dataset(out_dir, config: SynthConfig | None = None) -> Path:
    """Write the synthetic dataset as EDF plus manifest.json; returns the manifest path."""
    config = config or SynthConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    recordings, segset = synth_dataset(config)
    entries = []
    for i, rec in enumerate(recordings):
        name = f"{rec.patient_id}.edf"
        write_edf(rec, out_dir / name)
        entries.append(
            {
                "path": name,
                "patient_id": rec.patient_id,
                "segments": [
                    {
                        "start_sample": seg.start,
                        "length": seg.length,
                        "label": seg.label.name.lower(),
                    }
                    for seg in segset
                    if seg.recording == i
                ],
            }
        )
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, entries)
    return manifest_path


# ---------------------------------------------------------------------------
# Common-channel selection
# ---------------------------------------------------------------------------

@dataclass
class ChannelSelection:
    channels: list[str]
    retained: list[int]
    objective: int  # (retained segment count) x (retained channel count)
    warning: str | None = None


def _intersection(recordings: Sequence[Recording], ids: Sequence[int]) -> list[str]:
    common = set(recordings[ids[0]].channels)
    for i in ids[1:]:
        common &= set(recordings[i].channels)
    return sorted(common)


def select_common_channels(
    recordings: Sequence[Recording],
    segment_counts: Sequence[int] | None = None,
) -> ChannelSelection:
    """Pick the recording subset maximizing (segments kept) x (shared channels).

    Greedy search, two passes kept cheap at desk scale: grow a subset from
    every recording as anchor, always adding the recording that maximizes the
    objective, and walk the drop-one elimination path from the full set; the
    best subset seen anywhere wins. If nothing is shared across more than one
    recording the best single recording is returned with a warning set.
    """
    if not recordings:
        raise ValueError("need at least one recording")
    if segment_counts is None:
        segment_counts = [1] * len(recordings)
    if len(segment_counts) != len(recordings):
        raise ValueError("segment_counts must align with recordings")

    n = len(recordings)
    sets = [set(r.channels) for r in recordings]
    weights = list(segment_counts)

    def objective(ids: Sequence[int]) -> int:
        common = set(sets[ids[0]])
        for i in ids[1:]:
            common &= sets[i]
        return sum(weights[i] for i in ids) * len(common)

    best_score = -1
    best_ids: list[int] = []

    def consider(score: int, ids: Sequence[int]) -> None:
        nonlocal best_score, best_ids
        # deterministic tie-break: smaller subset, then lexicographic ids
        key = (score, -len(ids), [-i for i in sorted(ids)])
        cur = (best_score, -len(best_ids), [-i for i in sorted(best_ids)])
        if key > cur:
            best_score, best_ids = score, sorted(ids)

    for anchor in range(n):
        ids = [anchor]
        consider(objective(ids), ids)
        remaining = [i for i in range(n) if i != anchor]
        while remaining:
            scored = [(objective(ids + [j]), j) for j in remaining]
            score, j = max(scored)
            ids.append(j)
            remaining.remove(j)
            consider(score, ids)

    current = list(range(n))
    consider(objective(current), current)
    while len(current) > 1:
        scored = [(objective([i for i in current if i != d]), d) for d in current]
        score, drop = max(scored)
        current = [i for i in current if i != drop]
        consider(score, current)

    channels = _intersection(recordings, best_ids)
    warning = None
    if n > 1 and len(best_ids) == 1 and not _intersection(recordings, list(range(n))):
        warning = "no channel set shared across recordings; kept best single recording"
    return ChannelSelection(
        channels=channels, retained=best_ids, objective=best_score, warning=warning
    )
