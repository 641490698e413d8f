"""
Duration and energy predictors
==============================

Both predictors are trained on a synthetic corpus in which every phoneme
always has the same duration and loudness, so the targets are known.
"""

import numpy as np
import torch

from framediff.dataio import DEFAULT_INVENTORY, SynthItem
from framediff.predictors import PredictorTrainConfig, fill_items, train_predictor
from framediff.synthetic import fixed_target_corpus

torch.set_num_threads(1)
durations = {"AA1": 0.1, "T": 0.05, "S": 0.08, "N": 0.07}
amplitudes = {"AA1": 0.42, "T": 0.14, "S": 0.21, "N": 0.28}
corpus = fixed_target_corpus(200, durations, amplitudes, seed=0)

dur, hist = train_predictor(corpus, "duration", train_config=PredictorTrainConfig(steps=1500))
print("duration validation MSE (log s):", hist[-1][2])
en, hist = train_predictor(corpus, "energy", train_config=PredictorTrainConfig(steps=800))
print("energy validation MSE:", hist[-1][2])

ids = DEFAULT_INVENTORY.ids(durations)
print("predicted durations:", np.round(dur.predict(ids), 3), "targets:", list(durations.values()))
print("predicted RMS:", np.round(en.predict(ids), 3),
      "targets:", [round(a / np.sqrt(2), 3) for a in amplitudes.values()])

# the synthesis front end fills whatever the request leaves out
items = [SynthItem("N"), SynthItem("AA1", 0.2), SynthItem("T", None, 0.05)]
for it in fill_items(items, dur, en):
    print(it)
