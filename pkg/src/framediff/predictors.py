"""Per-phoneme duration and energy predictors.

Both are small conv stacks over a phoneme-id sequence:

* duration: embedding -> conv(k=5) -> ReLU -> norm -> dropout -> linear,
  regressing log-seconds (exponentiated at prediction time)
* energy: embedding -> 2 x [conv(k=7) -> conv(k=5) -> ReLU -> norm -> dropout]
  -> linear -> sigmoid, regressing per-phoneme RMS in [0, 1]
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .dataio import DEFAULT_INVENTORY, PhonemeInventory, SynthItem, Utterance, split_sizes
from .errors import InputError

log = logging.getLogger(__name__)

KINDS = ("duration", "energy")


@dataclass(frozen=True)
class PredictorConfig:
    which: str = "duration"
    inventory_size: int = 73
    embed_dim: int = 128
    hidden: int = 256
    dropout: float = 0.5

    def __post_init__(self):
        if self.which not in KINDS:
            raise InputError(f"predictor kind must be one of {KINDS}, got {self.which!r}")

    @property
    def blocks(self) -> tuple:
        return ((5,),) if self.which == "duration" else ((7, 5), (7, 5))


class ConvBlock(nn.Module):
    def __init__(self, cin, cout, kernels, dropout):
        super().__init__()
        convs = []
        for k in kernels:
            convs.append(nn.Conv1d(cin, cout, k, padding=k // 2))
            cin = cout
        self.convs = nn.ModuleList(convs)
        self.norm = nn.LayerNorm(cout)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):  # (B, C, N)
        for conv in self.convs:
            x = conv(x)
        x = F.relu(x)
        x = self.norm(x.transpose(1, 2)).transpose(1, 2)
        return self.dropout(x)


class PhonemePredictor(nn.Module):
    def __init__(self, config: PredictorConfig):
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(config.inventory_size, config.embed_dim, padding_idx=0)
        blocks, cin = [], config.embed_dim
        for kernels in config.blocks:
            blocks.append(ConvBlock(cin, config.hidden, kernels, config.dropout))
            cin = config.hidden
        self.blocks = nn.ModuleList(blocks)
        self.linear = nn.Linear(config.hidden, 1)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """Raw regression output ``(B, N)``: log-seconds or RMS."""
        if ids.dim() == 1:
            return self.forward(ids.unsqueeze(0))[0]
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.config.inventory_size):
            raise InputError("phoneme id outside the inventory")
        x = self.embed(ids).transpose(1, 2)
        for b in self.blocks:
            x = b(x)
        y = self.linear(x.transpose(1, 2)).squeeze(-1)
        return torch.sigmoid(y) if self.config.which == "energy" else y

    def to_target_space(self, values: torch.Tensor) -> torch.Tensor:
        return torch.log(values) if self.config.which == "duration" else values

    def from_target_space(self, raw: torch.Tensor) -> torch.Tensor:
        return torch.exp(raw) if self.config.which == "duration" else raw

    def predict(self, ids) -> np.ndarray:
        """Deterministic per-phoneme prediction (dropout off)."""
        was = self.training
        self.eval()
        try:
            with torch.no_grad():
                raw = self(torch.as_tensor(np.asarray(ids), dtype=torch.int64))
        finally:
            self.train(was)
        return self.from_target_space(raw).double().numpy()

    def save(self, path, **meta):
        return save_checkpoint(path, self.config.which, {
            "config": asdict(self.config),
            "state_dict": {k: v.detach().clone() for k, v in self.state_dict().items()},
            "meta": meta,
        })

    @classmethod
    def load(cls, path, which: str | None = None) -> "PhonemePredictor":
        data = load_checkpoint(path, which or KINDS)
        model = cls(PredictorConfig(**data["config"]))
        model.load_state_dict(data["state_dict"])
        model.eval()
        return model


def duration_forward(ids, model: PhonemePredictor) -> np.ndarray:
    if model.config.which != "duration":
        raise InputError("not a duration predictor")
    return model.predict(ids)


def energy_forward(ids, model: PhonemePredictor) -> np.ndarray:
    if model.config.which != "energy":
        raise InputError("not an energy predictor")
    return model.predict(ids)


def targets(utt: Utterance, which: str, inventory: PhonemeInventory = DEFAULT_INVENTORY):
    """``(ids, values)`` per span of an utterance."""
    ids = inventory.ids(sp.phoneme for sp in utt.spans)
    if which == "duration":
        vals = np.array([sp.duration for sp in utt.spans])
    else:
        if any(sp.energy is None for sp in utt.spans):
            raise InputError(f"utterance {utt.name!r} lacks energy targets")
        vals = np.array([sp.energy for sp in utt.spans])
    return ids, vals


def pad_batch(seqs: Sequence[tuple[np.ndarray, np.ndarray]], dtype=torch.float32):
    n = max(len(i) for i, _ in seqs)
    ids = torch.zeros(len(seqs), n, dtype=torch.int64)
    vals = torch.ones(len(seqs), n, dtype=dtype)
    mask = torch.zeros(len(seqs), n, dtype=torch.bool)
    for r, (i, v) in enumerate(seqs):
        ids[r, :len(i)] = torch.as_tensor(i)
        vals[r, :len(v)] = torch.as_tensor(v, dtype=dtype)
        mask[r, :len(i)] = True
    return ids, vals, mask


def predictor_loss(model: PhonemePredictor, ids, values, mask) -> torch.Tensor:
    """MSE in the regression space over real (unpadded) phonemes."""
    raw = model(ids)
    target = model.to_target_space(values.to(raw.dtype))
    diff = (raw - target)[mask]
    if diff.numel() == 0:
        raise InputError("empty batch")
    return (diff ** 2).mean()


@dataclass
class PredictorTrainConfig:
    steps: int = 2000
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    validate_every: int = 250
    cosine_decay: bool = True


def train_predictor(utterances: Sequence[Utterance], which: str,
                    config: PredictorConfig | None = None,
                    train_config: PredictorTrainConfig | None = None,
                    inventory: PhonemeInventory = DEFAULT_INVENTORY,
                    validation: Sequence[Utterance] | None = None):
    """Fit a predictor; returns ``(model, history)``.

    Without an explicit ``validation`` set the utterances are split with
    :func:`split_sizes` (validation drawn from the held-out portion when the
    corpus is large enough). ``history`` holds ``(step, train_mse, val_mse)``.
    """
    if not utterances:
        raise InputError("empty manifest")
    config = config or PredictorConfig(which=which, inventory_size=len(inventory))
    if config.which != which:
        raise InputError("config kind does not match the requested predictor")
    tc = train_config or PredictorTrainConfig()
    data = [targets(u, which, inventory) for u in utterances]
    if validation is None:
        n_train, n_val, _ = split_sizes(len(data))
        train_set, val_set = data[:n_train], data[n_train:n_train + n_val]
    else:
        train_set, val_set = data, [targets(u, which, inventory) for u in validation]
    g = torch.Generator().manual_seed(tc.seed)
    with torch.random.fork_rng():
        torch.manual_seed(tc.seed)
        model = PhonemePredictor(config)
        opt = torch.optim.Adam(model.parameters(), lr=tc.lr)
        sched = (torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, tc.steps))
                 if tc.cosine_decay else None)
        history = []
        for step in range(1, tc.steps + 1):
            model.train()
            pick = torch.randint(len(train_set), (min(tc.batch_size, len(train_set)),), generator=g)
            ids, vals, mask = pad_batch([train_set[i] for i in pick.tolist()])
            loss = predictor_loss(model, ids, vals, mask)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
            if step % tc.validate_every == 0 or step == tc.steps:
                val = evaluate_predictor(model, val_set) if val_set else float("nan")
                history.append((step, float(loss.detach()), val))
                log.info("%s predictor step %d train %.4g val %.4g", which, step, history[-1][1], val)
    model.eval()
    return model, history


def evaluate_predictor(model: PhonemePredictor, data) -> float:
    model.eval()
    with torch.no_grad():
        ids, vals, mask = pad_batch(data)
        return float(predictor_loss(model, ids, vals, mask))


def fill_items(items: Sequence[SynthItem], duration_model: PhonemePredictor | None = None,
               energy_model: PhonemePredictor | None = None, force_energy: bool = False,
               inventory: PhonemeInventory = DEFAULT_INVENTORY) -> list[SynthItem]:
    """Supply missing durations/energies from the predictors.

    With ``force_energy`` every energy is replaced by the prediction (the
    "predicted energy" synthesis setting).
    """
    ids = inventory.ids(it.phoneme for it in items)
    dur = en = None
    if any(it.duration is None for it in items):
        if duration_model is None:
            raise InputError("durations missing and no duration predictor given")
        dur = duration_forward(ids, duration_model)
    if force_energy or any(it.energy is None for it in items):
        if energy_model is None:
            raise InputError("energies missing and no energy predictor given")
        en = energy_forward(ids, energy_model)
    out = []
    for i, it in enumerate(items):
        d = it.duration if it.duration is not None else float(dur[i])
        e = float(en[i]) if en is not None and (force_energy or it.energy is None) else it.energy
        out.append(SynthItem(it.phoneme, d, e))
    return out
