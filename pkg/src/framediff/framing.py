"""Overlapping frames: segmentation, the overlap (inpainting) operator, assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .errors import InputError


def ms_to_samples(ms: float, rate: int) -> int:
    # round half up: 250 ms at 22050 Hz is 5512.5 -> 5513
    return int(math.floor(ms * rate / 1000.0 + 0.5))


@dataclass(frozen=True)
class FrameSpec:
    frame_len_ms: float
    overlap_ms: float
    sample_rate_hz: int
    frame_len: int = field(init=False)
    overlap_len: int = field(init=False)

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise InputError("sample rate must be positive")
        L = ms_to_samples(self.frame_len_ms, self.sample_rate_hz)
        Lo = ms_to_samples(self.overlap_ms, self.sample_rate_hz)
        if not 0 < Lo < L:
            raise InputError(f"need 0 < overlap < frame length, got L={L}, L_o={Lo}")
        object.__setattr__(self, "frame_len", L)
        object.__setattr__(self, "overlap_len", Lo)

    @classmethod
    def from_samples(cls, frame_len: int, overlap_len: int, sample_rate_hz: int) -> "FrameSpec":
        return cls(1000.0 * frame_len / sample_rate_hz,
                   1000.0 * overlap_len / sample_rate_hz, sample_rate_hz)

    @property
    def hop(self) -> int:
        return self.frame_len - self.overlap_len

    def to_dict(self) -> dict:
        return {"frame_len_ms": self.frame_len_ms, "overlap_ms": self.overlap_ms,
                "sample_rate_hz": self.sample_rate_hz}

    @classmethod
    def from_dict(cls, d: dict) -> "FrameSpec":
        return cls(float(d["frame_len_ms"]), float(d["overlap_ms"]), int(d["sample_rate_hz"]))


@dataclass(frozen=True)
class FramePlan:
    """Per-frame ``(start, end)`` sample boundaries with a fixed overlap."""

    boundaries: tuple
    overlap_len: int

    def __post_init__(self):
        b = tuple((int(s), int(e)) for s, e in self.boundaries)
        if not b:
            raise InputError("a frame plan needs at least one frame")
        if b[0][0] != 0:
            raise InputError("first frame must start at sample 0")
        for (s0, e0), (s1, e1) in zip(b, b[1:]):
            if s1 != e0 - self.overlap_len:
                raise InputError(
                    f"frame starting at {s1} does not overlap the previous frame "
                    f"(ends at {e0}) by {self.overlap_len} samples")
            if e1 <= e0:
                raise InputError("frame ends must strictly increase")
        for s, e in b:
            if e <= s:
                raise InputError(f"empty frame [{s}, {e})")
        object.__setattr__(self, "boundaries", b)

    def __len__(self):
        return len(self.boundaries)

    def __iter__(self):
        return iter(self.boundaries)

    @property
    def total_samples(self) -> int:
        return self.boundaries[-1][1]

    def lengths(self) -> list[int]:
        return [e - s for s, e in self.boundaries]

    @classmethod
    def fixed(cls, num_frames: int, spec: FrameSpec) -> "FramePlan":
        L, hop = spec.frame_len, spec.hop
        return cls(tuple((i * hop, i * hop + L) for i in range(num_frames)), spec.overlap_len)

    @classmethod
    def for_length(cls, total: int, spec: FrameSpec) -> "FramePlan":
        """Fixed-hop plan whose last frame is clipped to ``total``."""
        n = num_frames(total, spec)
        bounds = [(i * spec.hop, min(i * spec.hop + spec.frame_len, total)) for i in range(n)]
        return cls(tuple(bounds), spec.overlap_len)


def num_frames(total: int, spec: FrameSpec) -> int:
    if total < spec.frame_len:
        raise InputError(f"waveform of {total} samples is shorter than one frame ({spec.frame_len})")
    return 1 + -(-(total - spec.frame_len) // spec.hop)


def segment(waveform, spec: FrameSpec):
    """Cut ``waveform`` into frames of ``spec.frame_len`` samples at hop ``L - L_o``.

    Returns ``(frames, valid)`` where ``frames`` has shape ``(n, L)`` and
    ``valid[i]`` is the number of real (non-padding) samples in frame ``i``.
    """
    x = np.asarray(waveform)
    if x.ndim != 1:
        raise InputError("segment expects a 1-D waveform")
    T, L, hop = x.size, spec.frame_len, spec.hop
    n = num_frames(T, spec)
    frames = np.zeros((n, L), dtype=x.dtype)
    valid = np.empty(n, dtype=np.int64)
    for i in range(n):
        chunk = x[i * hop:i * hop + L]
        frames[i, :chunk.size] = chunk
        valid[i] = chunk.size
    return frames, valid


def overlap_context(prev, overlap: int, out_len: int | None = None):
    """Move the last ``overlap`` samples of ``prev`` to the front of a zero frame.

    Operates on the last axis, for numpy arrays or torch tensors. ``out_len``
    defaults to the length of ``prev``.
    """
    n = prev.shape[-1]
    out_len = n if out_len is None else out_len
    if not 0 < overlap <= min(n, out_len):
        raise InputError(f"overlap {overlap} incompatible with lengths {n} -> {out_len}")
    shape = tuple(prev.shape[:-1]) + (out_len,)
    if torch.is_tensor(prev):
        out = prev.new_zeros(shape)
    else:
        out = np.zeros(shape, dtype=np.asarray(prev).dtype)
    out[..., :overlap] = prev[..., n - overlap:]
    return out


def apply_H(frame, spec: FrameSpec):
    """The inpainting/reordering operator: ``out[i] = frame[L - L_o + i]`` for ``i < L_o``."""
    if frame.shape[-1] != spec.frame_len:
        raise InputError(f"frame length {frame.shape[-1]} != L={spec.frame_len}")
    return overlap_context(frame, spec.overlap_len)


def silence_frame(spec: FrameSpec, length: int | None = None) -> np.ndarray:
    return np.zeros(spec.frame_len if length is None else length, dtype=np.float64)


def assemble(frames: Sequence, plan: FramePlan) -> np.ndarray:
    """Concatenate frames, dropping each later frame's leading overlap.

    Frames longer than their planned span (e.g. zero-padded training frames)
    are truncated to the plan; shorter ones are rejected.
    """
    if len(frames) != len(plan):
        raise InputError(f"{len(frames)} frames for a plan of {len(plan)}")
    Lo = plan.overlap_len
    out = np.empty(plan.total_samples, dtype=np.result_type(*[np.asarray(f).dtype for f in frames]))
    for i, ((s, e), f) in enumerate(zip(plan, frames)):
        f = np.asarray(f)
        if f.shape[-1] < e - s:
            raise InputError(f"frame {i} has {f.shape[-1]} samples, plan needs {e - s}")
        if i == 0:
            out[s:e] = f[:e - s]
        else:
            out[s + Lo:e] = f[Lo:e - s]
    return out
