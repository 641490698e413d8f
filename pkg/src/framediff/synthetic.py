"""Speech-like synthetic utterances with exact alignments.

Every non-silence phoneme is rendered as a harmonic tone whose spectrum is
fixed per phoneme symbol, with a per-span amplitude and fundamental. Silence
spans are exactly zero. Amplitude, f0 and timbre are cross-faded over a few
milliseconds at span edges so the waveform has no clicks.
"""

from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

from .dataio import (ARPABET_72, SILENCE, PhonemeSpan, SynthItem, Utterance, seconds_to_samples,
                     with_energy)

VOICED = [p for p in ARPABET_72 if p not in (SILENCE, "sp", "spn")]


def timbre(phoneme: str, num_harmonics: int = 4) -> np.ndarray:
    """Unit-norm harmonic weights, fixed per phoneme symbol."""
    rng = np.random.default_rng(zlib.crc32(phoneme.encode()))
    w = rng.uniform(0.2, 1.0, num_harmonics) / np.arange(1, num_harmonics + 1)
    return w / np.linalg.norm(w)


def _smooth(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x
    kernel = np.ones(width) / width
    pad = [(width // 2, width - 1 - width // 2)] + [(0, 0)] * (x.ndim - 1)
    xp = np.pad(x, pad, mode="edge")
    if x.ndim == 1:
        return np.convolve(xp, kernel, mode="valid")
    return np.stack([np.convolve(xp[:, k], kernel, mode="valid") for k in range(x.shape[1])], axis=1)


def render(phonemes: Sequence[str], durations: Sequence[float], amplitudes: Sequence[float],
           f0s: Sequence[float], rate: int = 4000, num_harmonics: int = 4, fade_ms: float = 8.0,
           pitch_hop_s: float = 0.01, name: str = "") -> Utterance:
    """Render an utterance; spans get their measured RMS as energy.

    ``amplitudes`` are peak amplitudes of the harmonic sum, so a steady span
    has RMS ``amplitude / sqrt(2)``.
    """
    n = len(phonemes)
    if not (len(durations) == len(amplitudes) == len(f0s) == n):
        raise ValueError("phonemes, durations, amplitudes and f0s must have equal length")
    spans, t = [], 0.0
    for p, d in zip(phonemes, durations):
        spans.append(PhonemeSpan(p, t, t + float(d)))
        t += float(d)
    T = seconds_to_samples(t, rate)
    amp = np.zeros(T)
    f0 = np.zeros(T)
    weights = np.zeros((T, num_harmonics))
    prev_end = 0
    for sp, a, f in zip(spans, amplitudes, f0s):
        s, e = prev_end, seconds_to_samples(sp.end_s, rate)
        prev_end = e
        if sp.phoneme == SILENCE:
            continue
        amp[s:e] = a
        f0[s:e] = f
        weights[s:e] = timbre(sp.phoneme, num_harmonics)
    width = max(1, int(round(fade_ms * rate / 1000)))
    voiced = amp > 0
    amp_s = _smooth(amp, width) * voiced  # keep silences exactly zero
    # hold f0 / timbre into silences so fades do not glide in frequency
    idx = np.where(voiced, np.arange(T), 0)
    np.maximum.accumulate(idx, out=idx)
    f0_h, w_h = f0[idx], weights[idx]
    f0_s, w_s = _smooth(f0_h, width), _smooth(w_h, width)
    phase = 2 * np.pi * np.cumsum(f0_s) / rate
    k = np.arange(1, num_harmonics + 1)
    x = amp_s * np.sum(w_s * np.sin(phase[:, None] * k[None, :]), axis=1)
    times = np.arange(0.0, t, pitch_hop_s)
    pitch = f0[np.minimum(np.floor(times * rate + 0.5).astype(int), T - 1)] * (
        amp[np.minimum(np.floor(times * rate + 0.5).astype(int), T - 1)] > 0)
    return with_energy(Utterance(x, rate, spans, (times, pitch), name))


def random_utterance(seconds: float = 1.0, rate: int = 4000, seed: int = 0,
                     dur_range=(0.06, 0.11), amp_range=(0.1, 0.45), f0_range=(110.0, 200.0),
                     phonemes: Sequence[str] | None = None, lead_silence: float = 0.08,
                     name: str = "") -> Utterance:
    """A random phoneme string of roughly ``seconds`` with silence at both ends."""
    rng = np.random.default_rng(seed)
    pool = list(phonemes) if phonemes is not None else VOICED
    ph, du, am, f0 = [SILENCE], [lead_silence], [0.0], [0.0]
    body = seconds - 2 * lead_silence
    t = 0.0
    while True:
        d = float(np.round(rng.uniform(*dur_range), 3))
        if t + d > body:
            break
        p = pool[rng.integers(len(pool))]
        ph.append(p)
        du.append(d)
        am.append(float(rng.uniform(*amp_range)))
        f0.append(float(rng.uniform(*f0_range)))
        t += d
    du[-1] += body - t  # fill to the requested length
    ph.append(SILENCE)
    du.append(lead_silence)
    am.append(0.0)
    f0.append(0.0)
    return render(ph, du, am, f0, rate=rate, name=name or f"synthetic-{seed}")


def renditions(utt: Utterance, count: int, seed: int = 0, amp_range=(0.1, 0.45),
               f0_range=(110.0, 200.0)) -> list[Utterance]:
    """Re-render ``utt``'s phoneme string ``count`` times with fresh per-span amplitude and f0.

    Durations are kept, so every rendition shares one alignment while the
    loudness of each phoneme varies independently between renditions.
    """
    rng = np.random.default_rng(seed)
    ph = [sp.phoneme for sp in utt.spans]
    du = [sp.duration for sp in utt.spans]
    out = []
    for i in range(count):
        am = [0.0 if p == SILENCE else float(rng.uniform(*amp_range)) for p in ph]
        f0 = [0.0 if p == SILENCE else float(rng.uniform(*f0_range)) for p in ph]
        out.append(render(ph, du, am, f0, rate=utt.rate, name=f"{utt.name}-r{i}"))
    return out


def fixed_target_corpus(num_utterances: int, durations: dict, amplitudes: dict,
                        length: int = 12, rate: int = 4000, seed: int = 0) -> list[Utterance]:
    """Utterances where every phoneme always has the same duration and amplitude.

    Used to check that the duration/energy predictors recover known targets.
    """
    rng = np.random.default_rng(seed)
    pool = sorted(durations)
    out = []
    for i in range(num_utterances):
        ph = [pool[j] for j in rng.integers(len(pool), size=length)]
        f0 = rng.uniform(110.0, 200.0, size=length)
        out.append(render(ph, [durations[p] for p in ph], [amplitudes[p] for p in ph], f0,
                          rate=rate, name=f"fixed-{i}"))
    return out


def tiled_items(seconds: float, pattern: Sequence[str] = ("AA1", "N", "IY1", "S", "OW1", "M"),
                duration: float = 0.1, energy: float = 0.2) -> list[SynthItem]:
    """A synthesis request of ``seconds`` built by repeating a phoneme pattern."""
    count = max(1, int(round(seconds / duration)))
    return [SynthItem(pattern[i % len(pattern)], duration, energy) for i in range(count)]
