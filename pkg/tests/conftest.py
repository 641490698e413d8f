import numpy as np
import pytest
import torch
import torch.nn as nn

from framediff.denoiser import DenoiserConfig
from framediff.framing import FrameSpec
from framediff.model import WaveModel
from framediff.schedule import build_linear_schedule
from framediff.synthetic import random_utterance

torch.set_num_threads(1)

ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_spec():
    return FrameSpec.from_samples(512, 256, 4000)


@pytest.fixture(scope="session")
def clip():
    return random_utterance(1.0, rate=4000, seed=0)


def tiny_config(**kw):
    base = dict(num_layers=2, channels=4, dilation_cycle=(1, 2), step_embed_dim=16, step_hidden=8,
                conditions=())
    base.update(kw)
    return DenoiserConfig(**base)


def tiny_model(spec, conditions=(), steps=4, seed=0, randomize_output=True):
    m = WaveModel.create(tiny_config(conditions=conditions), build_linear_schedule(steps, 1e-4, 0.02),
                         spec, seed=seed)
    if randomize_output:
        with torch.no_grad():
            g = torch.Generator().manual_seed(seed + 1)
            m.denoiser.output.weight.copy_(0.3 * torch.randn(m.denoiser.output.weight.shape, generator=g))
    m.denoiser.eval()
    return m


class StubDenoiser(nn.Module):
    """Returns ``fn(x, context, step)`` and records every call."""

    def __init__(self, fn=None, conditions=()):
        super().__init__()
        self.dummy = nn.Parameter(torch.zeros(1))
        self.fn = fn or (lambda x, c, s: torch.zeros_like(x))
        self.config = tiny_config(conditions=conditions)
        self.calls = []

    def forward(self, x, context, steps, track=None):
        self.calls.append((x.clone(), None if context is None else context.clone(), steps, track))
        return self.fn(x, context, steps)
