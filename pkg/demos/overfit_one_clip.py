"""
Overfitting the denoiser on one clip
====================================

Trains the toy configuration on a single one-second synthetic clip, then
synthesizes it back frame by frame. The full run (5000 steps) takes around
ten minutes on one CPU core; pass a smaller step count to try it quickly.
"""

import sys

import numpy as np
import torch

from framediff import DenoiserConfig, FrameSpec, WaveModel, build_linear_schedule
from framediff.dataio import write_wav
from framediff.sampler import synthesize
from framediff.synthetic import random_utterance
from framediff.trainer import TrainConfig, Trainer

torch.set_num_threads(1)
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 500

clip = random_utterance(1.0, rate=4000, seed=0)
spec = FrameSpec.from_samples(512, 256, 4000)
model = WaveModel.create(DenoiserConfig.toy(), build_linear_schedule(50), spec, seed=0)
trainer = Trainer(model, [clip], TrainConfig(steps=steps, batch_size=16, lr=1e-3, seed=0))

for step, value in trainer.run():
    if step % 100 == 0:
        print(f"step {step:5d}  loss {np.mean(trainer.losses[-100:]):.4f}")

model.denoiser.eval()
wav = synthesize(model, clip, generator=torch.Generator().manual_seed(0))
write_wav("overfit_sample.wav", wav, 4000)
write_wav("overfit_target.wav", clip.samples, 4000)
print("correlation of 25 ms envelopes:",
      np.corrcoef(*(np.sqrt(np.mean(x[:4000].reshape(40, 100) ** 2, axis=1)) for x in (wav, clip.samples)))[0, 1])
