import numpy as np
import pytest
import torch

from conftest import tiny_model
from framediff.denoiser import DenoiserConfig
from framediff.model import WaveModel
from framediff.schedule import build_linear_schedule
from framediff.errors import InputError
from framediff.evalkit import (AllocationProbe, VarianceReport, VarianceRow, fraction_tighter, memory_profile,
                               seam_report, variance_report)
from framediff.framing import FramePlan, FrameSpec, assemble, segment

SPEC = FrameSpec.from_samples(400, 200, 4000)


def test_sine_seams_bounded():
    # |diff| of a sinusoid follows |cos|: its peak over its median is sqrt(2)
    t = np.arange(1800)
    x = 0.5 * np.sin(2 * np.pi * 137 * t / 4000)
    plan = FramePlan.for_length(x.size, SPEC)
    rep = seam_report(x, plan, 4000)
    assert len(rep.rows) == len(plan) - 1
    assert np.all(rep.ratios <= np.sqrt(2) * 1.01)


def test_injected_step_detected():
    t = np.arange(1800)
    x = 0.3 * np.sin(2 * np.pi * 50 * t / 4000)
    plan = FramePlan.for_length(x.size, SPEC)
    j = plan.boundaries[1][1]
    x[j:] += 0.5
    rep = seam_report(x, plan, 4000)
    assert rep.rows[1].ratio > 10 * max(r.ratio for i, r in enumerate(rep.rows) if i != 1)


def test_reassembled_ground_truth_is_exact(clip):
    spec = FrameSpec.from_samples(512, 256, 4000)
    frames, _ = segment(clip.samples, spec)
    plan = FramePlan.for_length(clip.num_samples, spec)
    y = assemble(list(frames), plan)
    assert np.array_equal(y, clip.samples)
    rep = seam_report(y, plan, 4000, reference=clip.samples)
    assert all(r.reference_ratio == 1.0 for r in rep.rows)


def test_seam_errors_and_tsv(tmp_path):
    plan = FramePlan.for_length(1000, SPEC)
    with pytest.raises(InputError):
        seam_report(np.zeros(999), plan, 4000)
    rep = seam_report(np.random.default_rng(0).standard_normal(1000), plan, 4000)
    rep.write_tsv(tmp_path / "s.tsv")
    lines = (tmp_path / "s.tsv").read_text().splitlines()
    assert lines[0].startswith("boundary\tsample") and lines[-1].startswith("median")


def test_probe_sees_tensor_and_numpy_allocations():
    with AllocationProbe() as p:
        a = torch.ones(250_000, dtype=torch.float64)
        del a
    assert p.tensor_peak >= 2_000_000
    with AllocationProbe() as p:
        b = np.ones(250_000)
        del b
    assert p.python_peak >= 2_000_000


def test_memory_single_vs_many_frames():
    # toy width so the tensor working set dominates interpreter noise
    m = WaveModel.create(DenoiserConfig.toy(conditions=()), build_linear_schedule(3), SPEC, seed=0)
    one_frame = SPEC.frame_len / SPEC.sample_rate_hz
    table = memory_profile(m, [one_frame, one_frame + 9 * SPEC.hop / SPEC.sample_rate_hz])
    assert [r.num_frames for r in table.rows] == [1, 10]
    assert table.rows[1].num_samples == SPEC.frame_len + 9 * SPEC.hop
    assert table.flatness < 1.1


def test_memory_conditional_and_table(tmp_path, toy_spec):
    m = tiny_model(toy_spec, ("phoneme", "energy"), steps=2)
    table = memory_profile(m, [0.5, 1.0])
    assert table.rows[1].num_phonemes == 10
    table.write_tsv(tmp_path / "m.tsv")
    assert len((tmp_path / "m.tsv").read_text().splitlines()) == 3
    with pytest.raises(InputError):
        memory_profile(m, [])
    with pytest.raises(InputError):
        memory_profile(m, [0.0])


def test_memory_plot(tmp_path):
    pytest.importorskip("matplotlib")
    m = tiny_model(SPEC, steps=2)
    memory_profile(m, [0.1, 0.2]).plot(tmp_path / "m.png")
    assert (tmp_path / "m.png").stat().st_size > 0


def test_variance_identical_seeds_zero_std(clip, toy_spec):
    m = tiny_model(toy_spec, ("phoneme", "energy"), steps=3)
    rep = variance_report(m, clip, seeds=[4, 4, 4])
    assert len(rep.rows) == sum(sp.phoneme != "sil" for sp in clip.spans)
    assert np.all(rep.stds() == 0)
    rep2 = variance_report(m, clip, k=3)
    assert rep2.seeds == [0, 1, 2] and np.all(rep2.stds() > 0)
    with pytest.raises(InputError):
        variance_report(m, clip, seeds=[1])


def test_fraction_tighter():
    mk = lambda stds: VarianceReport([VarianceRow(i, "AA1", 0.1, np.array([0.0, 2 * s]))
                                      for i, s in enumerate(stds)], [0, 1])
    assert fraction_tighter(mk([1, 1, 3, 1]), mk([2, 2, 2, 2])) == 0.75
    with pytest.raises(InputError):
        fraction_tighter(mk([1]), mk([1, 2]))
