"""Teacher-forced training of the denoiser on the noise-prediction objective."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .checkpoint import load_checkpoint
from .dataio import DEFAULT_INVENTORY, ConditionTrack, PhonemeInventory, Utterance, build_track
from .denoiser import DenoiserConfig, track_tensors
from .errors import InputError, NonFiniteError
from .framing import FrameSpec, num_frames, overlap_context
from .model import WaveModel
from .schedule import NoiseSchedule, q_sample

log = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_size: int = 16
    lr: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    grad_clip: float = 1.0
    precision: str = "float32"
    checkpoint_every: int = 1000
    mask_padding: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise InputError("steps, batch_size and checkpoint_every must be positive")
        if self.precision not in _DTYPES:
            raise InputError(f"precision must be one of {sorted(_DTYPES)}")
        self.adam_betas = tuple(self.adam_betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


@dataclass
class Example:
    x_s: torch.Tensor
    context: torch.Tensor
    track: ConditionTrack | None
    step: int
    eps: torch.Tensor
    valid: int
    utterance: int = -1
    frame: int = -1


@dataclass
class Batch:
    x_s: torch.Tensor
    context: torch.Tensor
    track: dict
    steps: torch.Tensor
    eps: torch.Tensor
    valid: torch.Tensor
    ids: list = field(default_factory=list)

    def __len__(self):
        return int(self.x_s.shape[0])


def draw_steps(n: int, num_steps: int, generator: torch.Generator) -> torch.Tensor:
    """``n`` diffusion steps uniform over ``{1, ..., num_steps}``."""
    return torch.randint(1, num_steps + 1, (n,), generator=generator)


def frame_bounds(utt: Utterance, l: int, spec: FrameSpec) -> tuple[int, int]:
    n = num_frames(utt.num_samples, spec)
    if not 0 <= l < n:
        raise InputError(f"frame index {l} outside [0, {n}) for utterance {utt.name!r}")
    start = l * spec.hop
    return start, start + spec.frame_len


def make_example(utt: Utterance, l: int, s: int, generator: torch.Generator, spec: FrameSpec,
                 sched: NoiseSchedule, conditions: Sequence[str] = (),
                 inventory: PhonemeInventory = DEFAULT_INVENTORY) -> Example:
    """One teacher-forced training example for frame ``l`` at diffusion step ``s``.

    The context is built from the ground-truth previous frame (silence for
    ``l = 0``); ``x_s`` is the clean frame noised in closed form.
    """
    start, end = frame_bounds(utt, l, spec)
    sched.check_step(s)
    L, Lo = spec.frame_len, spec.overlap_len
    chunk = utt.samples[start:end]
    x0 = np.zeros(L)
    x0[:chunk.size] = chunk
    if l == 0:
        context = np.zeros(L)
    else:
        prev = utt.samples[start - spec.hop:start - spec.hop + L]
        context = overlap_context(prev, Lo)
    track = None
    if conditions:
        if not utt.spans:
            raise InputError(f"utterance {utt.name!r} has no alignment for conditional training")
        track = build_track(utt, (start, end), inventory, conditions)
    eps = torch.randn(L, generator=generator, dtype=torch.float64)
    x_s = q_sample(torch.from_numpy(x0), s, eps, sched)
    return Example(x_s, torch.from_numpy(context), track, int(s), eps, int(chunk.size), frame=l)


def collate(examples: Sequence[Example], dtype=torch.float32) -> Batch:
    tracks = [e.track for e in examples if e.track is not None]
    if tracks and len(tracks) != len(examples):
        raise InputError("cannot mix conditional and unconditional examples")
    return Batch(
        x_s=torch.stack([e.x_s for e in examples]).to(dtype),
        context=torch.stack([e.context for e in examples]).to(dtype),
        track=track_tensors(tracks),
        steps=torch.tensor([e.step for e in examples], dtype=torch.int64),
        eps=torch.stack([e.eps for e in examples]).to(dtype),
        valid=torch.tensor([e.valid for e in examples], dtype=torch.int64),
        ids=[(e.utterance, e.frame) for e in examples],
    )


def masked_mse(pred: torch.Tensor, target: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
    """Per-example MSE over the first ``valid[i]`` samples, averaged over the batch."""
    if pred.shape[0] == 0:
        raise InputError("empty batch")
    sq = (pred - target) ** 2
    if valid is None:
        return sq.mean()
    L = sq.shape[-1]
    mask = (torch.arange(L, device=sq.device)[None, :] < valid[:, None]).to(sq.dtype)
    per = (sq * mask).sum(-1) / mask.sum(-1).clamp_min(1.0)
    return per.mean()


def loss(denoiser, batch: Batch, mask_padding: bool = True) -> torch.Tensor:
    """The noise-prediction objective on one batch."""
    if len(batch) == 0:
        raise InputError("empty batch")
    pred = denoiser(batch.x_s, batch.context, batch.steps, batch.track or None)
    return masked_mse(pred, batch.eps, batch.valid if mask_padding else None)


class Trainer:
    """Single-writer training loop with exact resume.

    All randomness (utterance order, frame choice, step, noise) comes from
    one seeded ``torch.Generator`` whose state is checkpointed.
    """

    def __init__(self, model: WaveModel, utterances: Sequence[Utterance], config: TrainConfig,
                 inventory: PhonemeInventory = DEFAULT_INVENTORY):
        if not utterances:
            raise InputError("no training utterances")
        rates = {u.rate for u in utterances}
        if rates != {model.frame_spec.sample_rate_hz}:
            raise InputError(f"utterance rates {sorted(rates)} != model rate {model.frame_spec.sample_rate_hz}")
        self.model = model
        self.utterances = list(utterances)
        self.config = config
        self.inventory = inventory
        self.dtype = _DTYPES[config.precision]
        self.model.denoiser.to(self.dtype)
        self.optimizer = torch.optim.Adam(model.denoiser.parameters(), lr=config.lr,
                                          betas=config.adam_betas)
        self.generator = torch.Generator().manual_seed(config.seed)
        self.step = 0
        self.losses: list[float] = []
        self._order: list[int] = []
        self._frames = [num_frames(u.num_samples, model.frame_spec) for u in self.utterances]

    def _next_utterance(self) -> int:
        if not self._order:
            self._order = torch.randperm(len(self.utterances), generator=self.generator).tolist()
        return self._order.pop(0)

    def next_batch(self) -> Batch:
        m = self.model
        S = m.schedule.num_steps
        examples = []
        for _ in range(self.config.batch_size):
            u = self._next_utterance()
            l = int(torch.randint(self._frames[u], (1,), generator=self.generator))
            s = int(draw_steps(1, S, self.generator))
            ex = make_example(self.utterances[u], l, s, self.generator, m.frame_spec, m.schedule,
                              m.conditions, self.inventory)
            ex.utterance = u
            examples.append(ex)
        return collate(examples, self.dtype)

    def train_step(self) -> float:
        net = self.model.denoiser
        net.train()
        batch = self.next_batch()
        value = loss(net, batch, self.config.mask_padding)
        if not torch.isfinite(value):
            raise NonFiniteError(f"non-finite loss at step {self.step + 1} (batch {batch.ids})",
                                 step=self.step + 1, detail=batch.ids)
        self.optimizer.zero_grad(set_to_none=True)
        value.backward()
        if self.config.grad_clip:
            torch.nn.utils.clip_grad_norm_(net.parameters(), self.config.grad_clip)
        self.optimizer.step()
        self.step += 1
        v = float(value.detach())
        self.losses.append(v)
        return v

    def run(self, steps: int | None = None, out_dir=None, log_file=None) -> Iterator[tuple[int, float]]:
        """Train for ``steps`` more steps, yielding ``(step, loss)``.

        With ``out_dir``, checkpoints ``step_XXXXXXX.pt`` and ``last.pt`` are
        written every ``checkpoint_every`` steps and at the end.
        """
        steps = self.config.steps - self.step if steps is None else steps
        log_fh = open(log_file, "a") if log_file else None
        try:
            for _ in range(steps):
                v = self.train_step()
                if log_fh:
                    log_fh.write(f"{self.step}\t{v:.6g}\n")
                if out_dir and self.step % self.config.checkpoint_every == 0:
                    self.save(Path(out_dir) / f"step_{self.step:07d}.pt")
                    self.save(Path(out_dir) / "last.pt")
                yield self.step, v
            if out_dir and self.step % self.config.checkpoint_every:
                self.save(Path(out_dir) / "last.pt")
        finally:
            if log_fh:
                log_fh.close()

    def fit(self, steps: int | None = None, **kw) -> list[float]:
        for step, v in self.run(steps, **kw):
            if step % 500 == 0:
                log.info("step %d loss %.4f", step, v)
        return self.losses

    def save(self, path):
        self.model.meta.update(train_step=self.step, seed=self.config.seed)
        return self.model.save(path, train_state={
            "config": self.config.to_dict(),
            "step": self.step,
            "optimizer": self.optimizer.state_dict(),
            "generator": self.generator.get_state(),
            "order": list(self._order),
            "losses": list(self.losses),
        })

    @classmethod
    def resume(cls, path, utterances, inventory: PhonemeInventory = DEFAULT_INVENTORY,
               **config_overrides) -> "Trainer":
        data = load_checkpoint(path, "denoiser")
        if "train_state" not in data:
            raise InputError(f"{path}: checkpoint has no training state")
        st = data["train_state"]
        cfg = TrainConfig(**{**st["config"], **config_overrides})
        model = WaveModel.from_payload(data)
        tr = cls(model, utterances, cfg, inventory)
        tr.optimizer.load_state_dict(st["optimizer"])
        tr.generator.set_state(st["generator"])
        tr.step = int(st["step"])
        tr._order = list(st["order"])
        tr.losses = list(st["losses"])
        return tr


def train(utterances: Sequence[Utterance], train_config: TrainConfig, denoiser_config: DenoiserConfig,
          schedule: NoiseSchedule, frame_spec: FrameSpec, out_dir=None,
          inventory: PhonemeInventory = DEFAULT_INVENTORY) -> Trainer:
    """Build a fresh model and train it for ``train_config.steps`` steps.

    With ``out_dir`` the run leaves periodic checkpoints and a ``loss.tsv``
    log (``step<TAB>loss``) behind.
    """
    model = WaveModel.create(denoiser_config, schedule, frame_spec, seed=train_config.seed,
                             dtype=_DTYPES[train_config.precision])
    trainer = Trainer(model, utterances, train_config, inventory)
    log_file = None
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        log_file = Path(out_dir) / "loss.tsv"
    trainer.fit(out_dir=out_dir, log_file=log_file)
    return trainer
