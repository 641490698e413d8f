"""Objective diagnostics: seam continuity, memory profiling, multi-sample variance."""

from __future__ import annotations

import csv
import gc
import tracemalloc
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch.multiprocessing.reductions import StorageWeakRef
from torch.utils._python_dispatch import TorchDispatchMode
from torch.utils._pytree import tree_flatten

from .dataio import SILENCE, Utterance, phoneme_rms, plan_frames, utterance_from_items
from .errors import InputError, NonFiniteError
from .framing import FramePlan, FrameSpec
from .model import WaveModel
from .sampler import generate_unconditional, synthesize
from .synthetic import tiled_items


# --------------------------------------------------------------------------
# seams

@dataclass
class SeamRow:
    boundary: int
    sample: int
    jump: float
    interior_median: float
    ratio: float
    reference_ratio: float = float("nan")


@dataclass
class SeamReport:
    rows: list
    window_ms: float

    @property
    def median_ratio(self) -> float:
        r = [row.ratio for row in self.rows if np.isfinite(row.ratio)]
        return float(np.median(r)) if r else float("nan")

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.rows])

    def write_tsv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            w.writerow(["boundary", "sample", "jump", "interior_median", "ratio", "reference_ratio"])
            for r in self.rows:
                w.writerow([r.boundary, r.sample, f"{r.jump:.6g}", f"{r.interior_median:.6g}",
                            f"{r.ratio:.6g}", f"{r.reference_ratio:.6g}"])
            w.writerow(["median", "", "", "", f"{self.median_ratio:.6g}", ""])


def _junction_stats(x: np.ndarray, j: int, half: int) -> tuple[float, float, float]:
    d = np.abs(np.diff(x))  # d[i] = |x[i+1] - x[i]|
    jump = float(d[j - 1])
    lo, hi = max(0, j - 1 - half), min(d.size, j - 1 + half + 1)
    window = np.concatenate([d[lo:j - 1], d[j:hi]])
    med = float(np.median(window)) if window.size else float("nan")
    if med > 0:
        ratio = jump / med
    else:
        ratio = 1.0 if jump == 0 else float("inf")
    return jump, med, ratio


def seam_report(waveform, plan: FramePlan, sample_rate: int, window_ms: float = 20.0,
                reference=None) -> SeamReport:
    """Jump at each frame junction relative to the local first-difference level.

    The junction of frame ``l`` is the first sample of its new content (the
    end of frame ``l - 1``). ``ratio`` is ``|x[j] - x[j-1]|`` divided by the
    median absolute first difference within ``±window_ms`` (junction
    excluded). With a ``reference`` waveform, ``reference_ratio`` is the
    ratio relative to the same statistic on the reference, which is exactly
    1 when the two agree around the junction.
    """
    x = np.asarray(waveform, dtype=np.float64)
    if x.size != plan.total_samples:
        raise InputError(f"waveform has {x.size} samples, plan covers {plan.total_samples}")
    ref = None if reference is None else np.asarray(reference, dtype=np.float64)
    if ref is not None and ref.size != x.size:
        raise InputError("reference length differs from the waveform")
    half = max(1, int(round(window_ms * sample_rate / 1000.0)))
    rows = []
    for l in range(1, len(plan)):
        j = plan.boundaries[l - 1][1]
        if j >= x.size:
            continue
        jump, med, ratio = _junction_stats(x, j, half)
        row = SeamRow(l, j, jump, med, ratio)
        if ref is not None:
            rj, rm, rr = _junction_stats(ref, j, half)
            row.reference_ratio = 1.0 if rr == ratio else (ratio / rr if rr else float("inf"))
        rows.append(row)
    return SeamReport(rows, window_ms)


# --------------------------------------------------------------------------
# memory

class _StorageTracker(TorchDispatchMode):
    """Counts bytes of tensor storages created inside the mode that are still alive."""

    def __init__(self):
        super().__init__()
        self.live: dict = {}
        self.current = 0
        self.peak = 0

    def _sweep(self):
        dead = [k for k, (ref, _) in self.live.items() if ref.expired()]
        for k in dead:
            self.current -= self.live.pop(k)[1]

    def __torch_dispatch__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        self._sweep()
        for t in tree_flatten(out)[0]:
            if isinstance(t, torch.Tensor):
                st = t.untyped_storage()
                ref = StorageWeakRef(st)
                if ref.cdata not in self.live:
                    n = st.nbytes()
                    self.live[ref.cdata] = (ref, n)
                    self.current += n
        self.peak = max(self.peak, self.current)
        return out


class AllocationProbe:
    """Peak transient allocation inside a ``with`` block.

    Tracks live torch tensor storages created in the block (via a dispatch
    mode) and the Python/numpy heap above its level at entry (via
    ``tracemalloc``). ``peak_bytes`` is the sum of the two peaks, an upper
    bound on the simultaneous peak.
    """

    def __enter__(self):
        gc.collect()
        self._started = not tracemalloc.is_tracing()
        if self._started:
            tracemalloc.start()
        tracemalloc.reset_peak()
        self._base = tracemalloc.get_traced_memory()[0]
        self._tracker = _StorageTracker()
        self._tracker.__enter__()
        return self

    def __exit__(self, *exc):
        self._tracker.__exit__(*exc)
        cur, peak = tracemalloc.get_traced_memory()
        self.python_peak = max(0, peak - self._base)
        if self._started:
            tracemalloc.stop()
        self.tensor_peak = self._tracker.peak
        self.peak_bytes = self.tensor_peak + self.python_peak
        return False


class _CountingSink:
    def __init__(self):
        self.num_samples = 0

    def write(self, chunk):
        self.num_samples += len(chunk)


@dataclass
class MemoryRow:
    seconds: float
    num_phonemes: int
    num_frames: int
    num_samples: int
    peak_bytes: int
    tensor_peak: int
    python_peak: int


@dataclass
class MemoryTable:
    rows: list = field(default_factory=list)

    @property
    def flatness(self) -> float:
        peaks = [r.peak_bytes for r in self.rows]
        return max(peaks) / min(peaks)

    def write_tsv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            w.writerow(["seconds", "phonemes", "frames", "samples", "peak_bytes", "tensor_peak", "python_peak"])
            for r in self.rows:
                w.writerow([r.seconds, r.num_phonemes, r.num_frames, r.num_samples, r.peak_bytes,
                            r.tensor_peak, r.python_peak])

    def plot(self, path) -> None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot([r.seconds for r in self.rows], [r.peak_bytes / 2 ** 20 for r in self.rows], "o-")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("output length (s)")
        ax.set_ylabel("peak transient allocation (MiB)")
        ax.set_ylim(bottom=0)
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


def _warm_up(model: WaveModel, spec: FrameSpec) -> None:
    # one probed frame so lazy imports and first-call caches are not counted
    g = torch.Generator().manual_seed(0)
    with AllocationProbe():
        if model.conditions:
            utt = utterance_from_items(tiled_items(spec.frame_len / spec.sample_rate_hz), spec.sample_rate_hz,
                                       (np.zeros(1), np.full(1, 150.0)))
            synthesize(model, utt, spec, g, sink=_CountingSink(),
                       plan=FramePlan(((0, utt.num_samples),), spec.overlap_len))
        else:
            generate_unconditional(model, 1, spec, g, sink=_CountingSink())


def memory_profile(model: WaveModel, lengths_s: Sequence[float], seed: int = 0,
                   frame_spec: FrameSpec | None = None) -> MemoryTable:
    """One streamed synthesis per requested length, recording peak transient allocation.

    Conditional models get a tiled phoneme string of the requested length;
    unconditional models get the matching number of fixed frames. Inputs
    are built before the probe starts and the audio goes to a counting sink,
    so only the working set of generation is measured.
    """
    if not lengths_s:
        raise InputError("no lengths to profile")
    spec = frame_spec or model.frame_spec
    table = MemoryTable()
    _warm_up(model, spec)
    for seconds in lengths_s:
        if seconds <= 0:
            raise InputError(f"length must be positive, got {seconds}")
        g = torch.Generator().manual_seed(seed)
        sink = _CountingSink()
        if model.conditions:
            items = tiled_items(seconds)
            pitch = None
            if "pitch" in model.conditions:
                t = np.arange(0.0, seconds, 0.01)
                pitch = (t, np.full(t.size, 150.0))
            utt = utterance_from_items(items, spec.sample_rate_hz, pitch)
            plan = plan_frames(utt.spans, spec, utt.num_samples)
            with AllocationProbe() as probe:
                synthesize(model, utt, spec, g, sink=sink, plan=plan)
            n_ph = len(items)
        else:
            n = max(1, int(round((seconds * spec.sample_rate_hz - spec.frame_len) / spec.hop)) + 1)
            plan = FramePlan.fixed(n, spec)
            with AllocationProbe() as probe:
                generate_unconditional(model, n, spec, g, sink=sink)
            n_ph = 0
        table.rows.append(MemoryRow(seconds, n_ph, len(plan), sink.num_samples, probe.peak_bytes,
                                    probe.tensor_peak, probe.python_peak))
    return table


# --------------------------------------------------------------------------
# variance across syntheses

@dataclass
class VarianceRow:
    index: int
    phoneme: str
    target: float
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        # centred on the first value so identical samples give exactly 0
        return float(np.std(self.values - self.values[0]))


@dataclass
class VarianceReport:
    rows: list
    seeds: list

    def stds(self) -> np.ndarray:
        return np.array([r.std for r in self.rows])

    def write_tsv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            w.writerow(["index", "phoneme", "target", "mean", "std"] + [f"seed_{s}" for s in self.seeds])
            for r in self.rows:
                w.writerow([r.index, r.phoneme, f"{r.target:.6g}", f"{r.mean:.6g}", f"{r.std:.6g}"]
                           + [f"{v:.6g}" for v in r.values])


def variance_report(model: WaveModel, utterance: Utterance, k: int = 5, seeds: Sequence[int] | None = None,
                    frame_spec: FrameSpec | None = None) -> VarianceReport:
    """Per-phoneme RMS across ``k`` syntheses of the same utterance.

    Silence spans are skipped. Syntheses that fail numerically are dropped;
    fewer than two survivors is an error.
    """
    seeds = list(range(k)) if seeds is None else list(seeds)
    if len(seeds) < 2:
        raise InputError("need at least two syntheses")
    bounds = [utterance.span_bounds(i) for i in range(len(utterance.spans))]
    keep = [i for i, sp in enumerate(utterance.spans) if sp.phoneme != SILENCE]
    results, used = [], []
    for seed in seeds:
        g = torch.Generator().manual_seed(int(seed))
        try:
            wav = synthesize(model, utterance, frame_spec, g)
        except NonFiniteError:
            continue
        results.append([phoneme_rms(wav, bounds[i]) for i in keep])
        used.append(seed)
    if len(results) < 2:
        raise InputError(f"only {len(results)} synthesis(es) succeeded; need at least 2")
    vals = np.array(results)
    rows = [VarianceRow(i, utterance.spans[i].phoneme, float(utterance.spans[i].energy or 0.0), vals[:, c])
            for c, i in enumerate(keep)]
    return VarianceReport(rows, used)


def fraction_tighter(a: VarianceReport, b: VarianceReport) -> float:
    """Share of phonemes whose across-sample std is smaller in ``a`` than in ``b``."""
    if len(a.rows) != len(b.rows):
        raise InputError("reports cover different phoneme sequences")
    return float(np.mean(a.stds() < b.stds()))
