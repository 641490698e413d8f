"""Diffusion variance schedule and the closed-form forward process."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import InputError


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed per-step tables, stored at float64.

    Arrays are 0-indexed in memory while diffusion steps are 1-indexed:
    ``betas[s - 1]`` is the variance added at step ``s``. ``alpha_bar(0)``
    is defined as 1 (the clean signal).
    """

    betas: np.ndarray
    beta_min: float = field(default=float("nan"))
    beta_max: float = field(default=float("nan"))
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)
    sigmas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64).copy()
        if betas.ndim != 1 or betas.size == 0:
            raise InputError("betas must be a non-empty 1-D array")
        if not np.all((betas > 0) & (betas < 1)):
            raise InputError("every beta must lie in (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        prev = np.concatenate([[1.0], alpha_bars[:-1]])
        sigmas = np.sqrt((1.0 - prev) / (1.0 - alpha_bars) * betas)
        for name, arr in (("betas", betas), ("alphas", alphas),
                          ("alpha_bars", alpha_bars), ("sigmas", sigmas)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.isnan(self.beta_min):
            object.__setattr__(self, "beta_min", float(betas[0]))
        if np.isnan(self.beta_max):
            object.__setattr__(self, "beta_max", float(betas[-1]))

    @property
    def num_steps(self) -> int:
        return int(self.betas.size)

    def check_step(self, s: int, allow_zero: bool = False) -> int:
        s = int(s)
        lo = 0 if allow_zero else 1
        if not lo <= s <= self.num_steps:
            raise InputError(f"diffusion step {s} outside [{lo}, {self.num_steps}]")
        return s

    def alpha_bar(self, s: int) -> float:
        s = self.check_step(s, allow_zero=True)
        return 1.0 if s == 0 else float(self.alpha_bars[s - 1])

    def beta(self, s: int) -> float:
        return float(self.betas[self.check_step(s) - 1])

    def alpha(self, s: int) -> float:
        return float(self.alphas[self.check_step(s) - 1])

    def to_dict(self) -> dict:
        """Hyperparameters only; the tables are rebuilt on load."""
        return {"num_steps": self.num_steps, "beta_min": self.beta_min,
                "beta_max": self.beta_max, "spacing": "linear"}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return build_linear_schedule(int(d["num_steps"]), float(d["beta_min"]),
                                     float(d["beta_max"]))


def build_linear_schedule(num_steps: int, beta_min: float = 1e-4,
                          beta_max: float = 0.02) -> NoiseSchedule:
    """Linearly spaced betas from ``beta_min`` to ``beta_max`` inclusive."""
    if int(num_steps) != num_steps or num_steps < 1:
        raise InputError(f"num_steps must be a positive integer, got {num_steps}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise InputError(
            f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    betas = np.linspace(beta_min, beta_max, int(num_steps), dtype=np.float64)
    return NoiseSchedule(betas, beta_min=float(beta_min), beta_max=float(beta_max))


def posterior_sigma(s: int, sched: NoiseSchedule) -> float:
    """Standard deviation of the reverse-step noise at step ``s`` (0 at s=1)."""
    return float(sched.sigmas[sched.check_step(s) - 1])


def q_sample(x0, s, eps, sched: NoiseSchedule):
    """Noise a clean frame directly to step ``s``.

    ``s`` may be an int or, for batched torch input, a 1-D tensor of steps
    (one per row). Works for numpy arrays and torch tensors alike.
    """
    if tuple(x0.shape) != tuple(eps.shape):
        raise InputError(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    if torch.is_tensor(s):
        if s.numel() and (int(s.min()) < 1 or int(s.max()) > sched.num_steps):
            raise InputError("diffusion step outside [1, S]")
        ab = torch.tensor(sched.alpha_bars.copy(), dtype=x0.dtype, device=x0.device)[s - 1]
        ab = ab.reshape(ab.shape + (1,) * (x0.dim() - ab.dim()))
        return ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps
    ab = sched.alpha_bar(sched.check_step(s))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
