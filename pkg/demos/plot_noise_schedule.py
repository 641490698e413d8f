"""
Noise schedule and the forward process
======================================

A linear variance schedule, its cumulative products, and a frame noised
to a few diffusion steps in closed form.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from framediff import build_linear_schedule, q_sample
from framediff.synthetic import random_utterance

sched = build_linear_schedule(200)
print("beta_1, beta_S:", sched.betas[0], sched.betas[-1])
print("alpha_bar_S:", sched.alpha_bars[-1])

# the posterior std is zero at the first step by construction
print("sigma_1:", sched.sigmas[0])

clip = random_utterance(1.0, rate=4000, seed=0)
x0 = clip.samples[800:1312]
rng = np.random.default_rng(0)

fig, axes = plt.subplots(2, 1, figsize=(7, 5))
axes[0].plot(sched.alpha_bars, label="alpha_bar")
axes[0].plot(sched.sigmas, label="sigma")
axes[0].set_xlabel("step")
axes[0].legend()
for s in (1, 20, 80, 200):
    axes[1].plot(q_sample(x0, s, rng.standard_normal(x0.size), sched), lw=0.7, label=f"s={s}")
axes[1].legend(fontsize=7)
fig.tight_layout()
fig.savefig("noise_schedule.png", dpi=110)
print("wrote noise_schedule.png")
