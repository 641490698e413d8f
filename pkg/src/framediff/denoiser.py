"""The noise-prediction network: a non-causal dilated-conv residual stack.

Each residual layer sees the noisy frame (through the residual stream), the
diffusion step (as a per-channel bias), and every active conditioning signal
through its own multi-scale residual block (MRB). The previous-frame context
is one such conditioning signal.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataio import TRACK_CHANNELS, ConditionTrack
from .errors import InputError


@dataclass(frozen=True)
class DenoiserConfig:
    num_layers: int = 36
    channels: int = 256
    dilation_cycle: tuple = tuple(2 ** i for i in range(12))
    cond_kernels: tuple = (3, 5, 7)
    step_embed_dim: int = 128
    step_hidden: int = 512
    inventory_size: int = 73
    conditions: tuple = ("phoneme", "energy")
    use_context: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dilation_cycle", tuple(int(d) for d in self.dilation_cycle))
        object.__setattr__(self, "cond_kernels", tuple(int(k) for k in self.cond_kernels))
        object.__setattr__(self, "conditions", tuple(self.conditions))
        if self.num_layers < 1 or self.channels < 1:
            raise InputError("num_layers and channels must be positive")
        if not self.dilation_cycle or any(d < 1 or d & (d - 1) for d in self.dilation_cycle):
            raise InputError(f"dilations must be powers of two, got {self.dilation_cycle}")
        if self.step_embed_dim < 2 or self.step_embed_dim % 2:
            raise InputError("step_embed_dim must be even")
        if any(k < 1 or k % 2 == 0 for k in self.cond_kernels):
            raise InputError("MRB kernels must be odd")
        bad = set(self.conditions) - set(TRACK_CHANNELS)
        if bad:
            raise InputError(f"unknown conditions {sorted(bad)}")

    @classmethod
    def toy(cls, **overrides) -> "DenoiserConfig":
        kw = dict(num_layers=4, channels=32, dilation_cycle=(1, 2, 4, 8), step_hidden=128)
        kw.update(overrides)
        return cls(**kw)

    @property
    def dilations(self) -> list[int]:
        cyc = self.dilation_cycle
        return [cyc[i % len(cyc)] for i in range(self.num_layers)]

    @property
    def mode(self) -> str:
        return "uncond" if not self.conditions else "+".join(self.conditions)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilation_cycle"] = list(self.dilation_cycle)
        d["cond_kernels"] = list(self.cond_kernels)
        d["conditions"] = list(self.conditions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


def receptive_half_width(config: DenoiserConfig, kernel: int = 3) -> int:
    """Samples seen on each side through the residual stack alone."""
    return sum(d * (kernel - 1) // 2 for d in config.dilations)


def step_embedding(s, dim: int = 128) -> torch.Tensor:
    """Sinusoidal encoding of the diffusion step: ``dim/2`` sines then ``dim/2`` cosines.

    ``s`` is an int or a 1-D tensor; returns shape ``(dim,)`` or ``(B, dim)``.
    """
    if dim % 2:
        raise InputError(f"embedding dim must be even, got {dim}")
    scalar = not torch.is_tensor(s)
    steps = torch.as_tensor(s, dtype=torch.float64).reshape(-1)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = steps[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    return emb[0] if scalar else emb


def _same_conv(cin, cout, k, dilation=1):
    return nn.Conv1d(cin, cout, k, dilation=dilation, padding=dilation * (k - 1) // 2)


class MRB(nn.Module):
    """Parallel dilated convolutions of different widths, summed."""

    def __init__(self, in_channels: int, out_channels: int, kernels=(3, 5, 7), dilation: int = 1):
        super().__init__()
        self.branches = nn.ModuleList(_same_conv(in_channels, out_channels, k, dilation) for k in kernels)

    def forward(self, x):
        out = None
        for b in self.branches:
            y = b(x)
            out = y if out is None else out + y
        return out

    def support_half_width(self) -> int:
        return max(b.dilation[0] * (b.kernel_size[0] - 1) // 2 for b in self.branches)


class ResidualLayer(nn.Module):
    def __init__(self, channels, dilation, cond_inputs: dict, kernels, step_hidden):
        super().__init__()
        C = channels
        self.step_proj = nn.Linear(step_hidden, C)
        self.dilated = _same_conv(C, 2 * C, 3, dilation)
        self.mrbs = nn.ModuleDict({name: MRB(cin, C, kernels, dilation)
                                   for name, cin in cond_inputs.items()})
        self.cond_proj = nn.Conv1d(C, 2 * C, 1) if cond_inputs else None
        self.out_proj = nn.Conv1d(C, 2 * C, 1)

    def forward(self, h, step_h, conds: dict):
        y = self.dilated(h + self.step_proj(step_h).unsqueeze(-1))
        if self.cond_proj is not None:
            c = None
            for name, mrb in self.mrbs.items():
                o = mrb(conds[name])
                c = o if c is None else c + o
            y = y + self.cond_proj(c)
        gate, filt = y.chunk(2, dim=1)
        z = torch.sigmoid(gate) * torch.tanh(filt)
        res, skip = self.out_proj(z).chunk(2, dim=1)
        return (h + res) * (1.0 / math.sqrt(2.0)), skip


class Denoiser(nn.Module):
    """Predicts the injected noise for a frame.

    ``forward(x, context, steps, track)`` takes ``(B, L)`` tensors for the
    noisy frame and the overlap context, ``(B,)`` integer steps, and a dict
    of ``(B, L)`` tensors keyed by active condition name (phoneme ids as
    int64, energy and pitch as reals).
    """

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        C = config.channels
        cond_inputs = {}
        if "phoneme" in config.conditions:
            self.phoneme_embed = nn.Embedding(config.inventory_size, C)
            cond_inputs["phoneme"] = C
        for name in ("energy", "pitch"):
            if name in config.conditions:
                cond_inputs[name] = 1
        if config.use_context:
            cond_inputs["context"] = 1
        self.input_proj = nn.Conv1d(1, C, 1)
        self.step_mlp = nn.Sequential(
            nn.Linear(config.step_embed_dim, config.step_hidden), nn.SiLU(),
            nn.Linear(config.step_hidden, config.step_hidden), nn.SiLU())
        self.layers = nn.ModuleList(
            ResidualLayer(C, d, cond_inputs, config.cond_kernels, config.step_hidden)
            for d in config.dilations)
        self.skip_proj = nn.Conv1d(C, C, 1)
        self.output = nn.Conv1d(C, 1, 1)
        nn.init.zeros_(self.output.weight)
        nn.init.zeros_(self.output.bias)

    def _cond_inputs(self, context, track, L, dtype):
        cfg = self.config
        track = dict(track or {})
        extra = set(track) - set(cfg.conditions)
        if extra:
            raise InputError(f"condition(s) {sorted(extra)} not active in this model ({cfg.mode})")
        missing = set(cfg.conditions) - set(track)
        if missing:
            raise InputError(f"missing condition(s) {sorted(missing)}")
        conds = {}
        for name, v in track.items():
            if v.shape[-1] != L:
                raise InputError(f"{name} track length {v.shape[-1]} != frame length {L}")
            if name == "phoneme":
                conds[name] = self.phoneme_embed(v.long()).transpose(1, 2)
            elif name == "pitch":
                conds[name] = torch.log1p(v.to(dtype) / 100.0).unsqueeze(1)
            else:
                conds[name] = v.to(dtype).unsqueeze(1)
        if cfg.use_context:
            if context is None:
                raise InputError("this model needs the previous-frame context")
            if context.shape[-1] != L:
                raise InputError(f"context length {context.shape[-1]} != frame length {L}")
            conds["context"] = context.to(dtype).unsqueeze(1)
        return conds

    def forward(self, x, context, steps, track=None):
        if x.dim() == 1:
            x = x.unsqueeze(0)
            context = None if context is None else context.reshape(1, -1)
            track = None if track is None else {k: v.reshape(1, -1) for k, v in track.items()}
            return self.forward(x, context, steps, track)[0]
        B, L = x.shape
        dtype = self.input_proj.weight.dtype
        steps = torch.as_tensor(steps, device=x.device).reshape(-1).expand(B)
        conds = self._cond_inputs(context, track, L, dtype)
        h = F.relu(self.input_proj(x.to(dtype).unsqueeze(1)))
        step_h = self.step_mlp(step_embedding(steps, self.config.step_embed_dim).to(dtype))
        skip = None
        for layer in self.layers:
            h, s = layer(h, step_h, conds)
            skip = s if skip is None else skip + s
        out = skip * (1.0 / math.sqrt(len(self.layers)))
        out = self.output(F.relu(self.skip_proj(out)))
        return out.squeeze(1)


def track_tensors(tracks, device=None) -> dict:
    """Stack one or more ConditionTracks into the dict ``Denoiser`` expects."""
    if isinstance(tracks, ConditionTrack):
        tracks = [tracks]
    if not tracks:
        return {}
    out = {}
    for name in tracks[0].active():
        arr = np.stack([t.active()[name] for t in tracks])
        dtype = torch.int64 if name == "phoneme" else torch.float32
        out[name] = torch.as_tensor(arr, dtype=dtype, device=device)
    return out


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
