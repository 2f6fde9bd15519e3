"""Audio and metadata ingestion, plus a synthetic desk-scale dataset.

WAV support covers exactly what the source recordings use: RIFF PCM,
mono, 16- or 24-bit little-endian, 44100 Hz. Anything else is rejected
with a descriptive error; in particular there is no resampling, since
silently altering spectra is worse than failing.

Manifests are tab-separated: a header line, then
``filename<TAB>scene_label[<TAB>device_id]`` rows with labels drawn from
the fixed 10-scene vocabulary.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import AudioFormatError, ManifestError
from .frontend import Spectrogram, Waveform

SCENE_LABELS = (
    "airport",
    "bus",
    "metro",
    "metro_station",
    "park",
    "public_square",
    "shopping_mall",
    "street_pedestrian",
    "street_traffic",
    "tram",
)

_WAVE_FORMAT_PCM = 0x0001


@dataclass
class AudioClip:
    waveform: Waveform
    label: int
    clip_id: str
    device_id: str = None


@dataclass
class ManifestEntry:
    path: str
    label: str
    device_id: str = None


@dataclass
class DatasetManifest:
    entries: list
    split: str = "train"
    vocabulary: tuple = field(default=SCENE_LABELS)

    def label_index(self, entry: ManifestEntry) -> int:
        return self.vocabulary.index(entry.label)


def read_wav(path, expected_rate=44100) -> Waveform:
    """Decode a RIFF PCM WAV file into a normalized Waveform.

    16-bit samples divide by 32768 (so -32768 maps to exactly -1.0);
    24-bit frames are decoded from their 3-byte little-endian layout and
    divide by 2**23. ``expected_rate`` of None skips the rate check.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise AudioFormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif chunk_id == b"data":
            data = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None:
        raise AudioFormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise AudioFormatError(f"{path}: missing data chunk")
    audio_format, channels, rate, _, _, bits = fmt
    if audio_format != _WAVE_FORMAT_PCM:
        raise AudioFormatError(
            f"{path}: compressed or non-PCM audio (format tag {audio_format}); only PCM is supported"
        )
    if channels != 1:
        raise AudioFormatError(f"{path}: {channels} channels; only mono is supported")
    if expected_rate is not None and rate != expected_rate:
        raise AudioFormatError(
            f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz (no resampling)"
        )
    if bits not in (16, 24):
        raise AudioFormatError(f"{path}: {bits}-bit samples; only 16- and 24-bit PCM are supported")
    if len(data) == 0:
        raise AudioFormatError(f"{path}: zero-length waveform (empty data chunk)")

    if bits == 16:
        if len(data) % 2:
            raise AudioFormatError(f"{path}: data chunk not a whole number of 16-bit frames")
        samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    else:
        if len(data) % 3:
            raise AudioFormatError(f"{path}: data chunk not a whole number of 24-bit frames")
        triples = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        value = triples[:, 0] | (triples[:, 1] << 8) | (triples[:, 2] << 16)
        value = np.where(value >= 1 << 23, value - (1 << 24), value)
        samples = value.astype(np.float64) / float(1 << 23)
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path, waveform: Waveform, bits=24):
    """Encode a Waveform as RIFF PCM, clamping amplitudes to [-1, 1]."""
    if bits not in (16, 24):
        raise AudioFormatError(f"can only write 16- or 24-bit PCM, not {bits}")
    clipped = np.clip(waveform.samples, -1.0, 1.0)
    full_scale = 1 << (bits - 1)
    codes = np.clip(np.round(clipped * full_scale), -full_scale, full_scale - 1).astype(np.int32)
    if bits == 16:
        payload = codes.astype("<i2").tobytes()
    else:
        u = np.where(codes < 0, codes + (1 << 24), codes).astype(np.uint32)
        payload = np.stack(
            [u & 0xFF, (u >> 8) & 0xFF, (u >> 16) & 0xFF], axis=1
        ).astype(np.uint8).tobytes()
    byte_rate = waveform.sample_rate * bits // 8
    block_align = bits // 8
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(payload)))
        fh.write(b"WAVE")
        fh.write(b"fmt ")
        fh.write(struct.pack("<IHHIIHH", 16, _WAVE_FORMAT_PCM, 1, waveform.sample_rate, byte_rate, block_align, bits))
        fh.write(b"data")
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        if len(payload) & 1:
            fh.write(b"\x00")


def parse_manifest(path, vocabulary=SCENE_LABELS, split="train") -> DatasetManifest:
    """Parse a tab-separated manifest: header line, then path/label rows."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    entries = []
    seen = set()
    for row_num, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 2:
            raise ManifestError(f"{path} row {row_num}: missing tab separator")
        rel_path, label = fields[0], fields[1]
        device = fields[2] if len(fields) > 2 and fields[2] else None
        if label not in vocabulary:
            raise ManifestError(f"{path} row {row_num}: unknown scene label {label!r}")
        if rel_path in seen:
            raise ManifestError(f"{path} row {row_num}: duplicate path {rel_path!r}")
        seen.add(rel_path)
        entries.append(ManifestEntry(path=rel_path, label=label, device_id=device))
    return DatasetManifest(entries=entries, split=split, vocabulary=tuple(vocabulary))


def write_manifest(manifest: DatasetManifest, path):
    lines = ["filename\tscene_label\tsource_label"]
    for e in manifest.entries:
        lines.append(f"{e.path}\t{e.label}\t{e.device_id or ''}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_clips(manifest: DatasetManifest, audio_root, expected_rate=44100):
    """Read every manifest entry into an AudioClip."""
    import os

    clips = []
    for e in manifest.entries:
        wav = read_wav(os.path.join(audio_root, e.path), expected_rate=expected_rate)
        clips.append(
            AudioClip(
                waveform=wav,
                label=manifest.label_index(e),
                clip_id=e.path,
                device_id=e.device_id,
            )
        )
    return clips


def _band_periods(n_classes):
    """Distinct frequency-band widths per class, geometrically spaced.

    Adjacent classes are the confusable pairs, so the widths grow by a
    constant factor instead of by one row. Widths wider than the grid
    degenerate to a constant offset; at the default 64 bands the full
    ladder (2..23 rows) stays banded.
    """
    periods = []
    value = 2.0
    while len(periods) < n_classes:
        p = int(round(value))
        if periods and p <= periods[-1]:
            p = periods[-1] + 1
        periods.append(p)
        value *= 1.31
    return periods


def synth_dataset(n_per_class, seed, n_mels=64, n_frames=51, n_classes=10, amplitude=3.0, noise=0.3):
    """Deterministic synthetic (Spectrogram, label) pairs, class-balanced.

    Class c is Gaussian noise plus a deterministic pattern of alternating
    +/- amplitude offsets over frequency bands whose width is distinct per
    class. Band width is a translation-invariant texture cue, so the
    classes stay separable through convolution and global pooling.
    """
    rng = np.random.default_rng(seed)
    periods = _band_periods(n_classes)
    rows = np.arange(n_mels)
    examples = []
    for c in range(n_classes):
        wave = np.where((rows // periods[c]) % 2 == 0, amplitude, -amplitude)[:, None]
        for _ in range(n_per_class):
            data = rng.normal(0.0, noise, size=(n_mels, n_frames)) + wave
            examples.append((Spectrogram(data=data, n_mels=n_mels, n_frames=n_frames), c))
    return examples


def synth_examples(n_total, seed, n_mels=64, n_frames=51, n_classes=10):
    """As-balanced-as-possible synthetic set with exactly ``n_total`` examples."""
    if n_total < 1:
        raise ValueError("n_total must be >= 1")
    base = synth_dataset((n_total + n_classes - 1) // n_classes, seed, n_mels, n_frames, n_classes)
    counts = [n_total // n_classes + (1 if c < n_total % n_classes else 0) for c in range(n_classes)]
    per_class = {c: [ex for ex in base if ex[1] == c] for c in range(n_classes)}
    examples = []
    for c, count in enumerate(counts):
        examples.extend(per_class[c][:count])
    return examples
