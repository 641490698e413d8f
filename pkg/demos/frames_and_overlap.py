"""
Frames, overlap context and reassembly
======================================

A waveform is cut into overlapping frames. Each frame's context is the
tail of the previous frame moved to the front (the overlap operator);
putting the frames back together is exact.
"""

import numpy as np

from framediff import FramePlan, FrameSpec, apply_H, assemble, segment
from framediff.dataio import plan_frames
from framediff.synthetic import random_utterance

spec = FrameSpec(128, 64, 4000)
print("frame / overlap / hop samples:", spec.frame_len, spec.overlap_len, spec.hop)

clip = random_utterance(1.0, rate=4000, seed=1)
frames, valid = segment(clip.samples, spec)
print(len(frames), "frames; last frame holds", valid[-1], "real samples")

ctx = apply_H(frames[3], spec)
print("context head equals previous tail:", np.array_equal(ctx[:spec.overlap_len], frames[3][-spec.overlap_len:]))
print("context tail is zero:", not ctx[spec.overlap_len:].any())

y = assemble(list(frames), FramePlan.for_length(clip.num_samples, spec))
print("round trip exact:", np.array_equal(y, clip.samples))

# at synthesis time frames are stretched to end on phoneme boundaries
plan = plan_frames(clip.spans, spec, clip.num_samples)
print("phoneme-snapped frame lengths:", plan.lengths()[:8], "...")
