"""Waveform, alignment and pitch ingestion; per-sample condition tracks; frame planning.

File formats (all UTF-8, tab separated, ``#`` starts a comment line):

* alignment: ``phoneme  start_seconds  end_seconds``
* pitch: ``time_seconds  f0_hz`` at a fixed hop, 0 meaning unvoiced
* manifest: ``wav_path  alignment_path  [pitch_path]``; relative paths are
  resolved against the manifest's directory
* synthesis spec: ``phoneme  [duration_seconds]  [energy]``; an empty or
  ``-`` field is left for the predictors to fill
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile

from .errors import AlignmentError, InputError, PlanError, RateMismatchError
from .framing import FramePlan, FrameSpec

SILENCE = "sil"

_VOWELS = ["AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY",
           "IH", "IY", "OW", "OY", "UH", "UW"]
_CONSONANTS = ["B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N",
               "NG", "P", "R", "S", "SH", "T", "TH", "V", "W", "Y", "Z", "ZH"]
# ARPAbet with lexical stress on vowels plus the aligner's three non-speech
# labels: 15 * 3 + 24 + 3 = 72 symbols.
ARPABET_72 = ([v + str(k) for v in _VOWELS for k in (0, 1, 2)]
              + _CONSONANTS + [SILENCE, "sp", "spn"])

TRACK_CHANNELS = ("phoneme", "energy", "pitch")


@dataclass(frozen=True)
class PhonemeInventory:
    """Ordered phoneme symbols; id 0 is reserved for padding."""

    symbols: tuple = tuple(ARPABET_72)
    pad_id: int = 0

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise InputError("duplicate phoneme symbols")
        object.__setattr__(self, "_index", {p: i + 1 for i, p in enumerate(self.symbols)})

    def __len__(self):
        """Embedding rows needed: symbols plus the pad row."""
        return len(self.symbols) + 1

    def __contains__(self, symbol):
        return symbol in self._index

    def id(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise AlignmentError(f"unknown phoneme {symbol!r}") from None

    def ids(self, symbols: Iterable[str]) -> np.ndarray:
        return np.array([self.id(p) for p in symbols], dtype=np.int64)

    def symbol(self, idx: int) -> str:
        if idx == self.pad_id:
            return "<pad>"
        return self.symbols[idx - 1]


DEFAULT_INVENTORY = PhonemeInventory()


@dataclass(frozen=True)
class PhonemeSpan:
    phoneme: str
    start_s: float
    end_s: float
    energy: float | None = None

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


@dataclass
class Utterance:
    """A waveform with its aligned phoneme spans and optional pitch series.

    ``samples`` may be ``None`` for a purely linguistic utterance (synthesis
    input), in which case the length comes from the last span.
    """

    samples: np.ndarray | None
    rate: int
    spans: list
    pitch: tuple | None = None  # (times_s, f0_hz) arrays
    name: str = ""
    _ends: np.ndarray = field(default=None, init=False, repr=False)

    @property
    def num_samples(self) -> int:
        if self.samples is not None:
            return int(self.samples.size)
        return seconds_to_samples(self.spans[-1].end_s, self.rate)

    @property
    def span_ends(self) -> np.ndarray:
        """Exclusive sample end of each span (cached)."""
        if self._ends is None:
            self._ends = np.array([seconds_to_samples(sp.end_s, self.rate) for sp in self.spans],
                                  dtype=np.int64)
        return self._ends

    def span_bounds(self, i: int) -> tuple[int, int]:
        start = 0 if i == 0 else int(self.span_ends[i - 1])
        return start, int(self.span_ends[i])


@dataclass
class ConditionTrack:
    """Per-sample conditioning for one frame."""

    phoneme_ids: np.ndarray
    energy: np.ndarray
    pitch: np.ndarray
    channels: frozenset = frozenset(TRACK_CHANNELS)

    def __len__(self):
        return int(self.phoneme_ids.size)

    def active(self) -> dict:
        full = {"phoneme": self.phoneme_ids, "energy": self.energy, "pitch": self.pitch}
        return {k: v for k, v in full.items() if k in self.channels}


def seconds_to_samples(t: float, rate: int) -> int:
    return int(math.floor(t * rate + 0.5))


# --------------------------------------------------------------------------
# WAV

def read_wav(path, expected_rate: int | None = None) -> tuple[np.ndarray, int]:
    """Read mono PCM/float WAV as float64 samples in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except (ValueError, EOFError) as exc:
        raise InputError(f"{path}: unreadable WAV ({exc})") from exc
    if data.ndim != 1:
        raise InputError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if expected_rate is not None and rate != expected_rate:
        raise RateMismatchError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise InputError(f"{path}: unsupported sample format {data.dtype}")
    return x, int(rate)


def write_wav(path, samples, rate: int) -> None:
    """Write 16-bit PCM, clipping to [-1, 1]."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, rate, np.round(x * 32767.0).astype(np.int16))


class WavStreamWriter:
    """Append-only 16-bit mono WAV writer; keeps no audio in memory."""

    def __init__(self, path, rate: int):
        import wave
        self._w = wave.open(str(path), "wb")
        self._w.setnchannels(1)
        self._w.setsampwidth(2)
        self._w.setframerate(rate)
        self.num_samples = 0

    def write(self, chunk) -> None:
        x = np.clip(np.asarray(chunk, dtype=np.float64), -1.0, 1.0)
        self._w.writeframes(np.round(x * 32767.0).astype("<i2").tobytes())
        self.num_samples += x.size

    def close(self) -> None:
        self._w.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# --------------------------------------------------------------------------
# text formats

def _rows(path) -> Iterable[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def parse_alignment(rows: Iterable[tuple[str, float, float]],
                    inventory: PhonemeInventory = DEFAULT_INVENTORY,
                    total_s: float | None = None, where: str = "") -> list[PhonemeSpan]:
    """Validate spans and fill gaps (including leading/trailing) with silence."""
    spans = []
    for i, (p, start, end) in enumerate(rows):
        if p not in inventory:
            raise AlignmentError(f"{where}unknown phoneme {p!r} (span {i + 1})")
        if not end > start:
            raise AlignmentError(f"{where}non-monotone span {p} [{start}, {end})")
        spans.append(PhonemeSpan(p, float(start), float(end)))
    spans.sort(key=lambda sp: sp.start_s)
    if not spans:
        raise AlignmentError(f"{where}empty alignment")
    out = []
    t = 0.0
    eps = 1e-9
    for sp in spans:
        if sp.start_s < t - eps:
            raise AlignmentError(
                f"{where}span {sp.phoneme} [{sp.start_s}, {sp.end_s}) overlaps previous span ending at {t}")
        if sp.start_s > t + eps:
            out.append(PhonemeSpan(SILENCE, t, sp.start_s))
        out.append(PhonemeSpan(sp.phoneme, t if out and sp.start_s <= t + eps else sp.start_s, sp.end_s))
        t = sp.end_s
    if out[0].start_s > eps:
        out.insert(0, PhonemeSpan(SILENCE, 0.0, out[0].start_s))
    elif out[0].start_s != 0.0:
        out[0] = replace(out[0], start_s=0.0)
    if total_s is not None:
        if total_s > t + eps:
            out.append(PhonemeSpan(SILENCE, t, total_s))
        elif total_s < t - eps:
            # clip spans that run past the audio
            out = [sp for sp in out if sp.start_s < total_s - eps]
            out[-1] = replace(out[-1], end_s=total_s)
    return out


def load_alignment(path, inventory: PhonemeInventory = DEFAULT_INVENTORY,
                   total_s: float | None = None) -> list[PhonemeSpan]:
    rows = []
    for lineno, cols in _rows(path):
        if len(cols) != 3:
            raise AlignmentError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(cols)}")
        try:
            rows.append((cols[0].strip(), float(cols[1]), float(cols[2])))
        except ValueError:
            raise AlignmentError(f"{path}:{lineno}: bad time value") from None
    return parse_alignment(rows, inventory, total_s, where=f"{path}: ")


def write_alignment(path, spans: Sequence[PhonemeSpan]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sp in spans:
            f.write(f"{sp.phoneme}\t{sp.start_s:.6f}\t{sp.end_s:.6f}\n")


def load_pitch(path) -> tuple[np.ndarray, np.ndarray]:
    times, f0 = [], []
    for lineno, cols in _rows(path):
        if len(cols) != 2:
            raise InputError(f"{path}:{lineno}: expected 2 tab-separated fields")
        try:
            times.append(float(cols[0]))
            f0.append(float(cols[1]))
        except ValueError:
            raise InputError(f"{path}:{lineno}: bad number") from None
    t = np.asarray(times)
    if t.size == 0 or np.any(np.diff(t) <= 0):
        raise InputError(f"{path}: pitch times must be non-empty and increasing")
    return t, np.asarray(f0)


def write_pitch(path, times, f0) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t, v in zip(times, f0):
            f.write(f"{t:.6f}\t{v:.3f}\n")


@dataclass(frozen=True)
class ManifestRecord:
    wav: str
    alignment: str
    pitch: str | None = None


def load_manifest(path) -> list[ManifestRecord]:
    base = Path(path).resolve().parent
    records = []
    for lineno, cols in _rows(path):
        if len(cols) not in (2, 3):
            raise InputError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
        paths = [str(base / c.strip()) if not os.path.isabs(c.strip()) else c.strip() for c in cols]
        records.append(ManifestRecord(*paths))
    if not records:
        raise InputError(f"{path}: empty manifest")
    return records


def write_manifest(path, records: Sequence[ManifestRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write("\t".join(x for x in (r.wav, r.alignment, r.pitch) if x) + "\n")


@dataclass(frozen=True)
class SynthItem:
    phoneme: str
    duration: float | None = None
    energy: float | None = None


def load_synth_spec(path, inventory: PhonemeInventory = DEFAULT_INVENTORY) -> list[SynthItem]:
    items = []

    def opt(cols, i, lineno):
        if len(cols) <= i or cols[i].strip() in ("", "-"):
            return None
        try:
            return float(cols[i])
        except ValueError:
            raise InputError(f"{path}:{lineno}: bad number {cols[i]!r}") from None

    for lineno, cols in _rows(path):
        p = cols[0].strip()
        if p not in inventory:
            raise AlignmentError(f"{path}:{lineno}: unknown phoneme {p!r}")
        items.append(SynthItem(p, opt(cols, 1, lineno), opt(cols, 2, lineno)))
    if not items:
        raise InputError(f"{path}: empty synthesis spec")
    return items


def load_utterance(record: ManifestRecord, rate: int,
                   inventory: PhonemeInventory = DEFAULT_INVENTORY) -> Utterance:
    """Load a manifest record with ground-truth per-span RMS energy attached."""
    samples, _ = read_wav(record.wav, expected_rate=rate)
    spans = load_alignment(record.alignment, inventory, total_s=samples.size / rate)
    pitch = load_pitch(record.pitch) if record.pitch else None
    utt = Utterance(samples, rate, spans, pitch, name=Path(record.wav).stem)
    return with_energy(utt)


def with_energy(utt: Utterance) -> Utterance:
    """Fill each span's missing energy with its measured RMS."""
    spans = []
    for i, sp in enumerate(utt.spans):
        if sp.energy is None:
            s, e = utt.span_bounds(i)
            sp = replace(sp, energy=phoneme_rms(utt.samples, (s, e)) if e > s else 0.0)
        spans.append(sp)
    return Utterance(utt.samples, utt.rate, spans, utt.pitch, utt.name)


# --------------------------------------------------------------------------
# energy, tracks, plans

def phoneme_rms(samples, span, rate: int | None = None) -> float:
    """Root of the mean squared sample over ``span``.

    ``span`` is either a ``(start, end)`` pair of sample indices or a
    :class:`PhonemeSpan` together with ``rate``.
    """
    if isinstance(span, PhonemeSpan):
        if rate is None:
            raise InputError("rate is required for a PhonemeSpan")
        start, end = seconds_to_samples(span.start_s, rate), seconds_to_samples(span.end_s, rate)
    else:
        start, end = (int(v) for v in span)
    x = np.asarray(samples, dtype=np.float64)
    if not 0 <= start < end <= x.size:
        raise InputError(f"span [{start}, {end}) empty or outside {x.size} samples")
    seg = x[start:end]
    return float(np.sqrt(np.dot(seg, seg) / seg.size))


def pitch_hold(times_s, f0_hz, rate: int, start: int, end: int) -> np.ndarray:
    """Zero-order hold of a pitch series onto samples ``[start, end)``.

    Samples before the first time stamp get 0; after the last one the last
    value is held.
    """
    pos = np.floor(np.asarray(times_s) * rate + 0.5).astype(np.int64)
    n = np.arange(start, end)
    idx = np.searchsorted(pos, n, side="right") - 1
    out = np.where(idx >= 0, np.asarray(f0_hz, dtype=np.float64)[np.clip(idx, 0, None)], 0.0)
    return out


def build_track(utt: Utterance, bounds: tuple[int, int],
                inventory: PhonemeInventory = DEFAULT_INVENTORY,
                channels: Iterable[str] = TRACK_CHANNELS) -> ConditionTrack:
    """Per-sample phoneme id / energy / pitch for samples ``[start, end)``.

    Samples past the end of the utterance are padding (pad id, zero energy,
    zero pitch). Cost is O(frame length + log #spans).
    """
    start, end = int(bounds[0]), int(bounds[1])
    T = utt.num_samples
    if start < 0 or end <= start:
        raise InputError(f"bad frame bounds [{start}, {end})")
    if start >= T:
        raise InputError(f"frame [{start}, {end}) starts past the utterance end ({T})")
    channels = frozenset(channels)
    unknown = channels - set(TRACK_CHANNELS)
    if unknown:
        raise InputError(f"unknown track channels {sorted(unknown)}")
    n = end - start
    ids = np.full(n, inventory.pad_id, dtype=np.int64)
    energy = np.zeros(n)
    pitch = np.zeros(n)
    ends = utt.span_ends
    stop = min(end, T)
    i = int(np.searchsorted(ends, start, side="right"))
    pos = start
    while pos < stop and i < len(utt.spans):
        seg_end = min(int(ends[i]), stop)
        sp = utt.spans[i]
        ids[pos - start:seg_end - start] = inventory.id(sp.phoneme)
        if "energy" in channels:
            if sp.energy is None:
                if utt.samples is None:
                    raise InputError(f"span {i} has no energy and there is no waveform")
                sp_energy = phoneme_rms(utt.samples, utt.span_bounds(i))
            else:
                sp_energy = sp.energy
            energy[pos - start:seg_end - start] = sp_energy
        pos = seg_end
        i += 1
    if "pitch" in channels and utt.pitch is not None:
        pitch[:stop - start] = pitch_hold(utt.pitch[0], utt.pitch[1], utt.rate, start, stop)
    return ConditionTrack(ids, energy, pitch, channels)


def plan_frames(spans: Sequence[PhonemeSpan], spec: FrameSpec, total_samples: int | None = None,
                max_frame_len: int | None = None) -> FramePlan:
    """Greedy phoneme-snapped plan.

    Each frame starts ``L_o`` before the previous one ends and ends at the
    first phoneme boundary at or after ``start + L`` (clipped to the end of
    the utterance), so new content always spans whole phonemes.
    """
    rate = spec.sample_rate_hz
    ends = np.array([seconds_to_samples(sp.end_s, rate) for sp in spans], dtype=np.int64)
    if total_samples is None:
        total_samples = int(ends[-1])
    if ends.size == 0 or ends[-1] < total_samples:
        raise PlanError("spans do not cover the utterance")
    L, Lo = spec.frame_len, spec.overlap_len
    max_len = 2 * L if max_frame_len is None else max_frame_len
    bounds = []
    start = 0
    while True:
        nominal = start + L
        if nominal >= total_samples:
            end = total_samples
        else:
            end = int(ends[np.searchsorted(ends, nominal, side="left")])
            end = min(end, total_samples)
        if end - start > max_len:
            raise PlanError(
                f"frame starting at sample {start} would need {end - start} samples "
                f"(max {max_len}); a phoneme is too long for the frame size")
        bounds.append((start, end))
        if end >= total_samples:
            break
        start = end - Lo
    return FramePlan(tuple(bounds), Lo)


def utterance_from_items(items: Sequence[SynthItem], rate: int, pitch=None, name="") -> Utterance:
    """Linguistic-only utterance from items whose durations are all set."""
    spans = []
    t = 0.0
    for it in items:
        if it.duration is None or it.duration <= 0:
            raise InputError(f"phoneme {it.phoneme} has no positive duration")
        spans.append(PhonemeSpan(it.phoneme, t, t + it.duration, it.energy))
        t += it.duration
    return Utterance(None, rate, spans, pitch, name)


def split_sizes(n: int) -> tuple[int, int, int]:
    """Train/validation/test sizes; the 13,100-clip LJ corpus uses 12838/131/131."""
    if n == 13100:
        return 12838, 131, 131
    if n < 3:
        return n, 0, 0
    held = max(1, int(round(n * 131 / 13100)))
    return n - 2 * held, held, held
