"""A trained denoiser bundled with the schedule and framing it was trained for."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .denoiser import Denoiser, DenoiserConfig
from .framing import FrameSpec
from .schedule import NoiseSchedule


@dataclass
class WaveModel:
    denoiser: Denoiser
    schedule: NoiseSchedule
    frame_spec: FrameSpec
    meta: dict = field(default_factory=dict)

    @property
    def config(self) -> DenoiserConfig:
        return self.denoiser.config

    @property
    def conditions(self) -> tuple:
        return self.denoiser.config.conditions

    @classmethod
    def create(cls, config: DenoiserConfig, schedule: NoiseSchedule, frame_spec: FrameSpec,
               seed: int = 0, dtype=torch.float32) -> "WaveModel":
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            net = Denoiser(config).to(dtype)
        return cls(net, schedule, frame_spec, {"init_seed": seed})

    def payload(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "schedule": self.schedule.to_dict(),
            "frame_spec": self.frame_spec.to_dict(),
            "state_dict": {k: v.detach().clone() for k, v in self.denoiser.state_dict().items()},
            "meta": dict(self.meta),
        }

    def save(self, path, **extra):
        return save_checkpoint(path, "denoiser", {**self.payload(), **extra})

    @classmethod
    def from_payload(cls, data: dict) -> "WaveModel":
        cfg = DenoiserConfig.from_dict(data["config"])
        net = Denoiser(cfg)
        dtype = next(iter(data["state_dict"].values())).dtype
        net = net.to(dtype)
        net.load_state_dict(data["state_dict"])
        net.eval()
        return cls(net, NoiseSchedule.from_dict(data["schedule"]),
                   FrameSpec.from_dict(data["frame_spec"]), dict(data.get("meta", {})))

    @classmethod
    def load(cls, path) -> "WaveModel":
        return cls.from_payload(load_checkpoint(path, "denoiser"))
