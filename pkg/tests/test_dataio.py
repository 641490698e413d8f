import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from framediff.dataio import (ARPABET_72, DEFAULT_INVENTORY, ManifestRecord, PhonemeSpan, Utterance,
                              build_track, load_alignment, load_manifest, load_pitch, load_synth_spec,
                              load_utterance, parse_alignment, phoneme_rms, plan_frames, read_wav,
                              split_sizes, utterance_from_items, write_alignment, write_manifest,
                              write_pitch, write_wav)
from framediff.errors import AlignmentError, InputError, PlanError, RateMismatchError
from framediff.framing import FramePlan, FrameSpec

INV = DEFAULT_INVENTORY


def sample_spans(pairs, rate):
    """Spans given in sample units."""
    return [PhonemeSpan(p, a / rate, b / rate) for p, a, b in pairs]


def test_inventory_sizes():
    assert len(ARPABET_72) == 72 and len(set(ARPABET_72)) == 72
    assert len(INV) == 73
    assert INV.pad_id == 0 and INV.id(ARPABET_72[0]) == 1
    assert INV.symbol(INV.id("T")) == "T"
    with pytest.raises(AlignmentError):
        INV.id("XX")


# WAV -------------------------------------------------------------------

def test_read_wav_scaling_and_silence(tmp_path):
    p = tmp_path / "a.wav"
    wavfile.write(p, 8000, np.array([32767, 0, -32768], dtype=np.int16))
    x, rate = read_wav(p, 8000)
    assert rate == 8000
    assert x[0] == pytest.approx(0.99997, abs=1e-5) and x[2] == -1.0
    wavfile.write(p, 8000, np.zeros(100, dtype=np.int16))
    assert np.all(read_wav(p)[0] == 0)


def test_read_wav_errors(tmp_path):
    p = tmp_path / "a.wav"
    wavfile.write(p, 44100, np.zeros(10, dtype=np.int16))
    with pytest.raises(RateMismatchError):
        read_wav(p, 22050)
    wavfile.write(p, 22050, np.zeros((10, 2), dtype=np.int16))
    with pytest.raises(InputError):
        read_wav(p, 22050)
    p.write_bytes(b"RIFF0000garbage")
    with pytest.raises(InputError):
        read_wav(p)


def test_wav_roundtrip(tmp_path, rng):
    x = rng.uniform(-1, 1, 500)
    write_wav(tmp_path / "b.wav", x, 4000)
    y, _ = read_wav(tmp_path / "b.wav", 4000)
    # written at 1/32767 per step, read back at 1/32768
    assert np.max(np.abs(x - y)) < 2.0 / 32767


# alignment ---------------------------------------------------------------

def test_alignment_basic_and_gap(tmp_path):
    p = tmp_path / "a.tsv"
    p.write_text("AH0\t0\t0.10\nT\t0.10\t0.25\n")
    spans = load_alignment(p)
    assert [s.phoneme for s in spans] == ["AH0", "T"]
    p.write_text("AH0\t0\t0.10\nT\t0.10\t0.25\nS\t0.30\t0.40\n")
    spans = load_alignment(p)
    assert [s.phoneme for s in spans] == ["AH0", "T", "sil", "S"]
    assert (spans[2].start_s, spans[2].end_s) == (0.25, 0.30)


def test_alignment_leading_trailing_fill():
    spans = parse_alignment([("T", 0.05, 0.1)], total_s=0.2)
    assert [(s.phoneme, s.start_s, s.end_s) for s in spans] == [
        ("sil", 0.0, 0.05), ("T", 0.05, 0.1), ("sil", 0.1, 0.2)]


@pytest.mark.parametrize("rows", [
    [("AH0", 0, 0.2), ("T", 0.1, 0.3)],
    [("QQ", 0, 0.1)],
    [("T", 0.2, 0.1)],
    [],
])
def test_alignment_errors(rows):
    with pytest.raises(AlignmentError):
        parse_alignment(rows)


def test_alignment_file_error_names_line(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("AH0\t0\t0.1\nT\tx\t0.2\n")
    with pytest.raises(AlignmentError, match=r"bad.tsv:2"):
        load_alignment(p)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["AA1", "T", "S"]), st.floats(0.001, 0.2), st.floats(0, 0.1)),
                min_size=1, max_size=20))
def test_alignment_coverage(segments):
    rows, t = [], 0.0
    for p, d, gap in segments:
        t += gap
        rows.append((p, t, t + d))
        t += d
    spans = parse_alignment(rows, total_s=t + 0.05)
    assert spans[0].start_s == 0.0 and spans[-1].end_s == pytest.approx(t + 0.05)
    for a, b in zip(spans, spans[1:]):
        assert b.start_s == a.end_s
        assert a.end_s > a.start_s


def test_alignment_pitch_manifest_roundtrip(tmp_path):
    spans = parse_alignment([("AH0", 0, 0.1), ("T", 0.1, 0.25)])
    write_alignment(tmp_path / "a.tsv", spans)
    assert load_alignment(tmp_path / "a.tsv") == spans
    write_pitch(tmp_path / "p.tsv", [0.0, 0.01], [100.0, 0.0])
    t, f = load_pitch(tmp_path / "p.tsv")
    assert list(f) == [100.0, 0.0]
    write_manifest(tmp_path / "m.tsv", [ManifestRecord("a.wav", "a.tsv"), ManifestRecord("b.wav", "b.tsv", "p.tsv")])
    recs = load_manifest(tmp_path / "m.tsv")
    assert recs[0].wav == str(tmp_path / "a.wav") and recs[1].pitch == str(tmp_path / "p.tsv")


def test_synth_spec(tmp_path):
    p = tmp_path / "s.tsv"
    p.write_text("AH0\t0.1\t0.2\nT\nS\t-\t0.3\n")
    items = load_synth_spec(p)
    assert [(i.phoneme, i.duration, i.energy) for i in items] == [
        ("AH0", 0.1, 0.2), ("T", None, None), ("S", None, 0.3)]
    p.write_text("ZZ\n")
    with pytest.raises(AlignmentError):
        load_synth_spec(p)


def test_load_utterance_energy(tmp_path):
    rate = 1000
    x = np.concatenate([np.full(100, 0.5), np.full(150, -0.25)])
    write_wav(tmp_path / "u.wav", x, rate)
    (tmp_path / "u.tsv").write_text("AH0\t0\t0.1\nT\t0.1\t0.25\n")
    utt = load_utterance(ManifestRecord(str(tmp_path / "u.wav"), str(tmp_path / "u.tsv")), rate)
    assert [round(s.energy, 3) for s in utt.spans] == [0.5, 0.25]


# RMS --------------------------------------------------------------------

def test_rms_examples(rng):
    assert phoneme_rms(np.full(50, 0.5), (0, 50)) == pytest.approx(0.5)
    t = np.arange(800)
    assert phoneme_rms(0.7 * np.sin(2 * np.pi * t / 100), (0, 800)) == pytest.approx(0.7 / np.sqrt(2))
    x = rng.uniform(-1, 1, 1000)
    a, b = 123, 789
    oracle = np.sqrt(sum(float(v) ** 2 for v in x[a:b]) / (b - a))
    assert phoneme_rms(x, (a, b)) == pytest.approx(oracle, rel=1e-12)
    with pytest.raises(InputError):
        phoneme_rms(x, (5, 5))


@settings(max_examples=40, deadline=None)
@given(cuts=st.lists(st.integers(1, 999), min_size=1, max_size=8, unique=True), seed=st.integers(0, 999))
def test_rms_energy_additivity(cuts, seed):
    x = np.random.default_rng(seed).standard_normal(1000)
    edges = [0] + sorted(cuts) + [1000]
    total = sum((b - a) * phoneme_rms(x, (a, b)) ** 2 for a, b in zip(edges, edges[1:]))
    assert total == pytest.approx(float(np.sum(x ** 2)), rel=1e-10)


# tracks -----------------------------------------------------------------

def test_build_track_ids():
    rate = 1000
    utt = Utterance(np.zeros(250), rate, sample_spans([("AH0", 0, 100), ("T", 100, 250)], rate))
    tr = build_track(utt, (0, 250))
    assert np.array_equal(tr.phoneme_ids, [INV.id("AH0")] * 100 + [INV.id("T")] * 150)
    tr = build_track(utt, (120, 200))
    assert np.all(tr.phoneme_ids == INV.id("T"))


def test_build_track_padding_energy_pitch():
    rate = 1000
    spans = [PhonemeSpan("AH0", 0, 0.1, 0.3), PhonemeSpan("T", 0.1, 0.25, 0.1)]
    utt = Utterance(None, rate, spans, pitch=(np.array([0.0, 0.256]), np.array([100.0, 110.0])))
    tr = build_track(utt, (200, 300))
    assert len(tr) == 100
    assert np.all(tr.phoneme_ids[50:] == INV.pad_id) and np.all(tr.energy[50:] == 0)
    assert np.all(tr.pitch[50:] == 0) and np.all(tr.energy[:50] == 0.1)
    assert np.all(build_track(utt, (0, 250)).pitch == 100)
    with pytest.raises(InputError):
        build_track(utt, (300, 400))
    with pytest.raises(InputError):
        build_track(utt, (10, 10))


def test_pitch_hold_hop_256():
    rate = 22050
    spans = [PhonemeSpan("AA1", 0, 1000 / rate, 0.1)]
    utt = Utterance(None, rate, spans, pitch=(np.array([0.0, 256 / rate]), np.array([100.0, 110.0])))
    tr = build_track(utt, (0, 1000))
    assert np.all(tr.pitch[:256] == 100) and np.all(tr.pitch[256:] == 110)


def test_build_track_channels_and_determinism(clip):
    a = build_track(clip, (100, 612), channels=("phoneme", "energy"))
    b = build_track(clip, (100, 612), channels=("phoneme", "energy"))
    assert set(a.active()) == {"phoneme", "energy"}
    for k in a.active():
        assert np.array_equal(a.active()[k], b.active()[k])
    with pytest.raises(InputError):
        build_track(clip, (0, 10), channels=("loudness",))


# plans ------------------------------------------------------------------

def test_plan_smallest_boundary():
    spec = FrameSpec.from_samples(480, 100, 1000)
    spans = sample_spans([("AA1", 0, 450), ("T", 450, 520), ("S", 520, 900)], 1000)
    plan = plan_frames(spans, spec)
    assert plan.boundaries[0] == (0, 520)
    assert plan.boundaries[1][0] == 420


def test_plan_equals_fixed_when_aligned():
    spec = FrameSpec.from_samples(100, 50, 1000)
    spans = sample_spans([("AA1", 50 * i, 50 * (i + 1)) for i in range(5)], 1000)
    assert plan_frames(spans, spec).boundaries == FramePlan.fixed(4, spec).boundaries


def test_plan_short_and_overlong():
    spec = FrameSpec.from_samples(100, 50, 1000)
    plan = plan_frames(sample_spans([("AA1", 0, 60)], 1000), spec)
    assert plan.boundaries == ((0, 60),)
    with pytest.raises(PlanError):
        plan_frames(sample_spans([("AA1", 0, 30), ("T", 30, 400)], 1000), spec)


def test_plan_on_synthetic_clip_covers_whole_phonemes(clip, toy_spec):
    plan = plan_frames(clip.spans, toy_spec, clip.num_samples)
    ends = set(clip.span_ends.tolist())
    assert plan.total_samples == clip.num_samples
    for s, e in plan.boundaries:
        assert e in ends and e - s <= 2 * toy_spec.frame_len
        assert np.all(build_track(clip, (s, e)).phoneme_ids > 0)


def test_utterance_from_items_requires_durations():
    from framediff.dataio import SynthItem
    u = utterance_from_items([SynthItem("AA1", 0.1, 0.2), SynthItem("T", 0.05, 0.1)], 1000)
    assert u.num_samples == 150
    with pytest.raises(InputError):
        utterance_from_items([SynthItem("AA1")], 1000)


def test_split_sizes():
    assert split_sizes(13100) == (12838, 131, 131)
    tr, va, te = split_sizes(300)
    assert tr + va + te == 300 and va == te >= 1
