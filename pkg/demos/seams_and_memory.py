"""
Seam statistics and memory use
==============================

Junction jumps in an autoregressively generated waveform, and the peak
transient allocation of synthesis as the output gets longer.
"""

import torch

from framediff import DenoiserConfig, FrameSpec, WaveModel, build_linear_schedule
from framediff.dataio import plan_frames, utterance_from_items
from framediff.evalkit import memory_profile, seam_report
from framediff.sampler import synthesize
from framediff.synthetic import tiled_items

torch.set_num_threads(1)
spec = FrameSpec.from_samples(512, 256, 4000)
# an untrained model is enough to look at the bookkeeping
model = WaveModel.create(DenoiserConfig.toy(), build_linear_schedule(10), spec, seed=0)
model.denoiser.eval()

utt = utterance_from_items(tiled_items(2.0), 4000)
plan = plan_frames(utt.spans, spec, utt.num_samples)
wav = synthesize(model, utt, plan=plan, generator=torch.Generator().manual_seed(0))
report = seam_report(wav, plan, 4000)
print(f"{len(report.rows)} junctions, median jump ratio {report.median_ratio:.2f}")

table = memory_profile(model, [1, 2, 4, 8])
for row in table.rows:
    print(f"{row.seconds:4.0f} s  {row.num_frames:4d} frames  peak {row.peak_bytes / 2 ** 20:.2f} MiB")
print("flatness:", round(table.flatness, 3))
