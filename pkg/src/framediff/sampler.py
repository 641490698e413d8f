"""Ancestral reverse-diffusion sampling and the autoregressive frame loop.

The loop keeps only the previous frame and the current chain state alive,
so working memory does not grow with the output duration. Generated audio
is either handed to a sink chunk by chunk or concatenated at the end.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Iterator, Sequence

import numpy as np
import torch

from .dataio import DEFAULT_INVENTORY, ConditionTrack, PhonemeInventory, Utterance, build_track, plan_frames
from .denoiser import track_tensors
from .errors import InputError, NonFiniteError
from .framing import FramePlan, FrameSpec, overlap_context, silence_frame
from .model import WaveModel
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)


def _reverse_coefficients(sched: NoiseSchedule, s: int, literal: bool):
    """``(scale, eps_coef, sigma, net_step)`` for producing ``x_s`` from ``x_{s+1}``."""
    if not literal:
        t = s + 1
        a, ab, b = sched.alpha(t), sched.alpha_bar(t), sched.beta(t)
        return 1.0 / math.sqrt(a), b / math.sqrt(1.0 - ab), float(sched.sigmas[t - 1]), t
    # printed form: coefficients at index s with a 1/sqrt(alpha_bar_s) lead;
    # at s = 0 (alpha_bar_0 = 1, beta_0 = 0) the update degenerates to identity
    if s == 0:
        return 1.0, 0.0, 0.0, 0
    ab, b = sched.alpha_bar(s), sched.beta(s)
    return 1.0 / math.sqrt(ab), b / math.sqrt(1.0 - ab), float(sched.sigmas[s - 1]), s


def sample_frame(denoiser, sched: NoiseSchedule, context, track=None,
                 generator: torch.Generator | None = None, *, length: int | None = None,
                 literal: bool = False, clamp: bool = True, noise_scale: float = 1.0,
                 callback: Callable | None = None) -> np.ndarray:
    """Draw one frame by running the reverse chain from ``x_S ~ N(0, I)`` to ``x_0``.

    ``context`` is the overlap context (already passed through the overlap
    operator); ``track`` a :class:`ConditionTrack`, a dict of tensors, or
    ``None`` for an unconditional model. ``noise_scale`` multiplies the
    per-step noise (0 gives the mean path from a random start).
    ``callback(s, x_s, z)`` is invoked after each update with ``z=None``
    when no noise was added.
    """
    net = denoiser.denoiser if isinstance(denoiser, WaveModel) else denoiser
    param = next(net.parameters())
    dtype, device = param.dtype, param.device
    ctx = torch.as_tensor(np.asarray(context), dtype=dtype, device=device).reshape(1, -1)
    L = ctx.shape[-1] if length is None else length
    if ctx.shape[-1] != L:
        raise InputError(f"context length {ctx.shape[-1]} != frame length {L}")
    if isinstance(track, ConditionTrack):
        if len(track) != L:
            raise InputError(f"track length {len(track)} != frame length {L}")
        track = track_tensors(track, device)
    track = track or None
    S = sched.num_steps
    with torch.no_grad():
        x = torch.randn(1, L, generator=generator, dtype=dtype).to(device)
        for s in range(S - 1, -1, -1):
            scale, eps_coef, sigma, net_step = _reverse_coefficients(sched, s, literal)
            eps = net(x, ctx, net_step, track)
            x = scale * (x - eps_coef * eps)
            z = None
            if s > 0:
                z = torch.randn(1, L, generator=generator, dtype=dtype).to(device)
                x = x + (noise_scale * sigma) * z
            if not torch.isfinite(x).all():
                raise NonFiniteError(f"non-finite sample at diffusion step {s}", step=s)
            if callback is not None:
                callback(s, x, z)
        if clamp:
            x = x.clamp(-1.0, 1.0)
    return x[0].detach().cpu().numpy().astype(np.float64)


def iter_frames(model: WaveModel, plan: FramePlan, utterance: Utterance | None = None,
                generator: torch.Generator | None = None,
                inventory: PhonemeInventory = DEFAULT_INVENTORY,
                **sample_kw) -> Iterator[tuple[tuple[int, int], np.ndarray, np.ndarray]]:
    """Generate frames in order, yielding ``(bounds, frame, new_samples)``.

    Frame 0 is conditioned on silence, frame ``l`` on the tail of the
    generated frame ``l - 1``.
    """
    conds = model.conditions
    if conds and utterance is None:
        raise InputError(f"model is conditional ({model.config.mode}) but no utterance was given")
    Lo = plan.overlap_len
    prev = silence_frame(model.frame_spec)
    for i, (start, end) in enumerate(plan):
        n = end - start
        context = np.zeros(n) if i == 0 else overlap_context(prev, Lo, n)
        track = build_track(utterance, (start, end), inventory, conds) if conds else None
        frame = sample_frame(model.denoiser, model.schedule, context, track, generator, **sample_kw)
        log.debug("frame %d [%d, %d)", i, start, end)
        yield (start, end), frame, (frame if i == 0 else frame[Lo:])
        prev = frame


def _drain(chunks: Iterator, sink) -> np.ndarray | None:
    if sink is not None:
        for c in chunks:
            sink.write(c)
        return None
    parts = list(chunks)
    return np.concatenate(parts) if parts else np.zeros(0)


def synthesize(model: WaveModel, utterance: Utterance, frame_spec: FrameSpec | None = None,
               generator: torch.Generator | None = None, sink=None,
               inventory: PhonemeInventory = DEFAULT_INVENTORY, plan: FramePlan | None = None,
               **sample_kw):
    """Synthesize a conditional utterance frame by frame.

    ``utterance`` carries spans with durations and energies (and pitch if
    the model uses it). Frames are planned to end on phoneme boundaries.
    Returns the waveform, or ``None`` when a ``sink`` with ``write(chunk)``
    receives the audio instead.
    """
    spec = frame_spec or model.frame_spec
    if spec.sample_rate_hz != utterance.rate:
        raise InputError(f"utterance rate {utterance.rate} != frame rate {spec.sample_rate_hz}")
    if plan is None:
        plan = plan_frames(utterance.spans, spec, utterance.num_samples)
    chunks = (new for _, _, new in iter_frames(model, plan, utterance, generator, inventory, **sample_kw))
    return _drain(chunks, sink)


def generate_unconditional(model: WaveModel, num_frames: int, frame_spec: FrameSpec | None = None,
                           generator: torch.Generator | None = None, sink=None, **sample_kw):
    """Free-running generation of ``num_frames`` fixed-length frames."""
    if model.conditions:
        raise InputError(f"model is conditional ({model.config.mode}); use synthesize()")
    if num_frames < 1:
        raise InputError("num_frames must be at least 1")
    plan = FramePlan.fixed(num_frames, frame_spec or model.frame_spec)
    chunks = (new for _, _, new in iter_frames(model, plan, None, generator, **sample_kw))
    return _drain(chunks, sink)


def reverse_mean(denoiser, sched: NoiseSchedule, x_next, context, step: int, track=None):
    """Mean of the reverse transition into step ``step - 1`` from ``x_next`` at ``step``.

    Written in the textbook posterior form (clean-signal estimate mixed with
    ``x_next``); it must agree with the update used in :func:`sample_frame`.
    """
    t = sched.check_step(step)
    with torch.no_grad():
        eps = denoiser(x_next, context, t, track)
    ab, ab_prev = sched.alpha_bar(t), sched.alpha_bar(t - 1)
    a, b = sched.alpha(t), sched.beta(t)
    x0_hat = (x_next - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
    c0 = math.sqrt(ab_prev) * b / (1.0 - ab)
    ct = math.sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)
    return c0 * x0_hat + ct * x_next
