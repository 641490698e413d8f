"""Autoregressive frame-by-frame diffusion synthesis of raw waveforms."""

__version__ = "0.1.0"

from .dataio import (ConditionTrack, PhonemeInventory, PhonemeSpan, SynthItem, Utterance, build_track,
                     load_alignment, phoneme_rms, plan_frames, read_wav, write_wav)
from .denoiser import Denoiser, DenoiserConfig, step_embedding
from .errors import FrameDiffError, InputError, NonFiniteError, PlanError
from .framing import FramePlan, FrameSpec, apply_H, assemble, segment, silence_frame
from .model import WaveModel
from .sampler import generate_unconditional, sample_frame, synthesize
from .schedule import NoiseSchedule, build_linear_schedule, posterior_sigma, q_sample

__all__ = [
    "ConditionTrack", "PhonemeInventory", "PhonemeSpan", "SynthItem", "Utterance", "build_track",
    "load_alignment", "phoneme_rms", "plan_frames", "read_wav", "write_wav",
    "Denoiser", "DenoiserConfig", "step_embedding",
    "FrameDiffError", "InputError", "NonFiniteError", "PlanError",
    "FramePlan", "FrameSpec", "apply_H", "assemble", "segment", "silence_frame",
    "WaveModel", "generate_unconditional", "sample_frame", "synthesize",
    "NoiseSchedule", "build_linear_schedule", "posterior_sigma", "q_sample",
]
