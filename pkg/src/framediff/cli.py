"""Command-line entry point: ``framediff <command> ...``.

Exit codes: 0 success, 2 invalid input, 3 numeric failure, 4 resource error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import config_hash, file_id
from .dataio import (DEFAULT_INVENTORY, ManifestRecord, load_manifest, load_pitch, load_synth_spec,
                     load_utterance, plan_frames, read_wav, split_sizes, utterance_from_items,
                     write_manifest, WavStreamWriter)
from .denoiser import DenoiserConfig
from .errors import FrameDiffError, InputError, ResourceError
from .framing import FramePlan, FrameSpec
from .model import WaveModel
from .predictors import (PhonemePredictor, PredictorConfig, PredictorTrainConfig, fill_items,
                         train_predictor)
from .sampler import generate_unconditional, iter_frames
from .schedule import build_linear_schedule
from .trainer import TrainConfig, Trainer, train

log = logging.getLogger("framediff")

MODES = {
    "uncond": (),
    "cond-e": ("phoneme",),
    "cond": ("phoneme", "energy"),
    "cond+pitch": ("phoneme", "energy", "pitch"),
}
PRESETS = {
    "paper": dict(num_layers=36, channels=256, dilation_cycle=tuple(2 ** i for i in range(12))),
    "desk": dict(num_layers=12, channels=64, dilation_cycle=tuple(2 ** i for i in range(12))),
    "toy": dict(num_layers=4, channels=32, dilation_cycle=(1, 2, 4, 8), step_hidden=128),
}
TRAIN_DEFAULTS = dict(mode="cond", preset="desk", steps=100000, batch_size=16, lr=2e-4,
                      diffusion_steps=200, beta_min=1e-4, beta_max=0.02, rate=22050, seed=0,
                      checkpoint_every=1000, precision="float32", grad_clip=1.0)


def parse_kv_config(path) -> dict:
    """``key = value`` lines; ``#`` comments; dashes in keys become underscores."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _coerce(key, value, like):
    if like is None or isinstance(value, type(like)):
        return value
    try:
        return type(like)(value)
    except ValueError:
        raise InputError(f"config value {key}={value!r} is not a {type(like).__name__}") from None


def _sidecar(out_path, **meta) -> None:
    meta["framediff_version"] = __version__
    Path(str(out_path) + ".json").write_text(json.dumps(meta, indent=2, default=str) + "\n")


# --------------------------------------------------------------------------
# commands

def cmd_prepare(args) -> int:
    records = load_manifest(args.manifest)
    out = Path(args.out_dir)
    (out / "spans").mkdir(parents=True, exist_ok=True)
    index = []
    for rec in records:
        for p in (rec.wav, rec.alignment, rec.pitch):
            if p and not Path(p).exists():
                raise InputError(f"missing file: {p}")
        utt = load_utterance(rec, args.rate)
        span_file = out / "spans" / f"{utt.name}.tsv"
        with open(span_file, "w", encoding="utf-8") as f:
            for sp in utt.spans:
                f.write(f"{sp.phoneme}\t{sp.start_s:.6f}\t{sp.end_s:.6f}\t{sp.energy:.6g}\n")
        index.append((utt.name, rec, utt.num_samples, len(utt.spans)))
    with open(out / "index.tsv", "w", encoding="utf-8") as f:
        f.write("name\twav\talignment\tpitch\tsamples\tspans\n")
        for name, rec, n, k in index:
            f.write(f"{name}\t{rec.wav}\t{rec.alignment}\t{rec.pitch or ''}\t{n}\t{k}\n")
    n_train, n_val, n_test = split_sizes(len(records))
    write_manifest(out / "train.tsv", records[:n_train])
    write_manifest(out / "val.tsv", records[n_train:n_train + n_val])
    write_manifest(out / "test.tsv", records[n_train + n_val:])
    print(f"{len(records)} utterances -> train {n_train} / val {n_val} / test {n_test}")
    return 0


def _train_settings(args) -> dict:
    settings = dict(TRAIN_DEFAULTS)
    if args.config:
        for k, v in parse_kv_config(args.config).items():
            settings[k] = _coerce(k, v, TRAIN_DEFAULTS.get(k))
    for k, v in vars(args).items():
        if v is not None and k not in ("func", "config", "verbose"):
            settings[k] = v
    if settings["mode"] not in MODES:
        raise InputError(f"unknown mode {settings['mode']!r}")
    uncond = settings["mode"] == "uncond"
    settings.setdefault("frame_ms", 1000.0 if uncond else 500.0)
    settings.setdefault("overlap_ms", 500.0 if uncond else 250.0)
    return settings


def cmd_train(args) -> int:
    st = _train_settings(args)
    if "manifest" not in st or "out_dir" not in st:
        raise InputError("train needs --manifest and --out-dir (or config keys)")
    records = load_manifest(st["manifest"])
    utts = [load_utterance(r, int(st["rate"])) for r in records]
    n_train = split_sizes(len(utts))[0]
    utts = utts[:n_train]
    tc = TrainConfig(steps=int(st["steps"]), batch_size=int(st["batch_size"]), lr=float(st["lr"]),
                     grad_clip=float(st["grad_clip"]), precision=st["precision"],
                     checkpoint_every=int(st["checkpoint_every"]), seed=int(st["seed"]))
    out = Path(st["out_dir"])
    if st.get("resume"):
        trainer = Trainer.resume(st["resume"], utts, steps=tc.steps)
        trainer.fit(out_dir=out, log_file=out / "loss.tsv")
    else:
        preset = dict(PRESETS[st["preset"]])
        for key, name in (("layers", "num_layers"), ("channels", "channels")):
            if key in st:
                preset[name] = int(st[key])
        if "dilation_cycle" in st:
            dc = st["dilation_cycle"]
            preset["dilation_cycle"] = tuple(int(x) for x in (dc.split(",") if isinstance(dc, str) else dc))
        cfg = DenoiserConfig(conditions=MODES[st["mode"]], inventory_size=len(DEFAULT_INVENTORY), **preset)
        sched = build_linear_schedule(int(st["diffusion_steps"]), float(st["beta_min"]), float(st["beta_max"]))
        spec = FrameSpec(float(st["frame_ms"]), float(st["overlap_ms"]), int(st["rate"]))
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps({k: v for k, v in st.items()}, indent=2, default=str))
        trainer = train(utts, tc, cfg, sched, spec, out_dir=out)
    print(f"trained to step {trainer.step}; last loss {trainer.losses[-1]:.4f}; checkpoints in {out}")
    return 0


def cmd_train_predictor(args) -> int:
    records = load_manifest(args.manifest)
    utts = [load_utterance(r, args.rate) for r in records]
    model, history = train_predictor(
        utts, args.which, PredictorConfig(which=args.which, inventory_size=len(DEFAULT_INVENTORY)),
        PredictorTrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed))
    model.save(args.out, seed=args.seed, history=[list(h) for h in history])
    for step, tr, val in history:
        print(f"{step}\t{tr:.6g}\t{val:.6g}")
    return 0


def cmd_predict(args) -> int:
    items = load_synth_spec(args.spec)
    dur = PhonemePredictor.load(args.duration_model, "duration") if args.duration_model else None
    en = PhonemePredictor.load(args.energy_model, "energy") if args.energy_model else None
    filled = fill_items(items, dur, en, force_energy=args.force_energy)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for it in filled:
            e = "-" if it.energy is None else f"{it.energy:.6g}"
            out.write(f"{it.phoneme}\t{it.duration:.6f}\t{e}\n")
    finally:
        if args.out:
            out.close()
    return 0


def _frame_spec(model: WaveModel, args) -> FrameSpec:
    spec = model.frame_spec
    if getattr(args, "frame_ms", None) or getattr(args, "overlap_ms", None):
        spec = FrameSpec(args.frame_ms or spec.frame_len_ms, args.overlap_ms or spec.overlap_ms,
                         spec.sample_rate_hz)
    return spec


def cmd_synth(args) -> int:
    model = WaveModel.load(args.checkpoint)
    if not model.conditions:
        raise InputError("checkpoint is unconditional; use `generate`")
    items = load_synth_spec(args.spec)
    dur = PhonemePredictor.load(args.duration_model, "duration") if args.duration_model else None
    need_energy = "energy" in model.conditions
    en = PhonemePredictor.load(args.energy_model, "energy") if args.energy_model else None
    items = fill_items(items, dur, en if need_energy else None,
                       force_energy=need_energy and args.energy == "predicted") if (
        need_energy or any(it.duration is None for it in items)) else items
    spec = _frame_spec(model, args)
    pitch = None
    if "pitch" in model.conditions:
        if not args.pitch:
            raise InputError("this model is pitch-conditioned; pass --pitch FILE")
        pitch = load_pitch(args.pitch)
    utt = utterance_from_items(items, spec.sample_rate_hz, pitch)
    plan = plan_frames(utt.spans, spec, utt.num_samples)
    g = torch.Generator().manual_seed(args.seed)
    with WavStreamWriter(args.out, spec.sample_rate_hz) as w:
        for _, _, new in iter_frames(model, plan, utt, g):
            w.write(new)
    _sidecar(args.out, command="synth", seed=args.seed, checkpoint=str(args.checkpoint),
             checkpoint_id=file_id(args.checkpoint), config_hash=config_hash(model.config.to_dict()),
             mode=model.config.mode, energy=args.energy, frame_spec=spec.to_dict(),
             schedule=model.schedule.to_dict(), plan=[list(b) for b in plan.boundaries],
             overlap_len=plan.overlap_len,
             items=[[it.phoneme, it.duration, it.energy] for it in items])
    print(f"wrote {args.out} ({plan.total_samples} samples, {len(plan)} frames)")
    return 0


def cmd_generate(args) -> int:
    model = WaveModel.load(args.checkpoint)
    if model.conditions:
        raise InputError(f"checkpoint is conditional ({model.config.mode}); use `synth`")
    spec = _frame_spec(model, args)
    g = torch.Generator().manual_seed(args.seed)
    with WavStreamWriter(args.out, spec.sample_rate_hz) as w:
        generate_unconditional(model, args.frames, spec, g, sink=w)
    plan = FramePlan.fixed(args.frames, spec)
    _sidecar(args.out, command="generate", seed=args.seed, checkpoint=str(args.checkpoint),
             checkpoint_id=file_id(args.checkpoint), config_hash=config_hash(model.config.to_dict()),
             frame_spec=spec.to_dict(), schedule=model.schedule.to_dict(),
             plan=[list(b) for b in plan.boundaries], overlap_len=plan.overlap_len)
    print(f"wrote {args.out} ({plan.total_samples} samples, {args.frames} frames)")
    return 0


def cmd_eval(args) -> int:
    from .evalkit import fraction_tighter, memory_profile, seam_report, variance_report
    if args.what == "seams":
        x, rate = read_wav(args.wav)
        side = Path(str(args.wav) + ".json")
        if side.exists() and not args.frame_ms:
            meta = json.loads(side.read_text())
            plan = FramePlan(tuple(tuple(b) for b in meta["plan"]), int(meta["overlap_len"]))
        else:
            if not (args.frame_ms and args.overlap_ms):
                raise InputError("no sidecar plan; pass --frame-ms and --overlap-ms")
            plan = FramePlan.for_length(x.size, FrameSpec(args.frame_ms, args.overlap_ms, rate))
        ref = read_wav(args.reference)[0] if args.reference else None
        rep = seam_report(x, plan, rate, reference=ref)
        rep.write_tsv(args.out)
        print(f"{len(rep.rows)} junctions, median ratio {rep.median_ratio:.3f} -> {args.out}")
        return 0
    model = WaveModel.load(args.checkpoint)
    if args.what == "memory":
        table = memory_profile(model, args.lengths, seed=args.seed)
        table.write_tsv(args.out)
        if args.plot:
            table.plot(args.plot)
        print(f"flatness (max/min peak) {table.flatness:.4f} -> {args.out}")
        return 0
    # variance
    items = load_synth_spec(args.spec)
    if any(it.duration is None or it.energy is None for it in items):
        raise InputError("variance spec needs durations and energies on every line")
    spec = model.frame_spec
    utt = utterance_from_items(items, spec.sample_rate_hz)
    seeds = args.seeds or list(range(args.k))
    rep = variance_report(model, utt, k=len(seeds), seeds=seeds)
    rep.write_tsv(args.out)
    msg = f"mean per-phoneme std {np.mean(rep.stds()):.4g} -> {args.out}"
    if args.compare:
        other = variance_report(WaveModel.load(args.compare), utt, k=len(seeds), seeds=seeds)
        msg += f"; tighter than comparison on {100 * fraction_tighter(rep, other):.0f}% of phonemes"
    print(msg)
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="framediff", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prepare", help="validate a manifest and write split files")
    sp.add_argument("manifest")
    sp.add_argument("out_dir")
    sp.add_argument("--rate", type=int, default=22050)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train the denoiser")
    sp.add_argument("--config", help="key = value file; flags override it")
    sp.add_argument("--manifest")
    sp.add_argument("--out-dir")
    sp.add_argument("--mode", choices=sorted(MODES))
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--frame-ms", type=float)
    sp.add_argument("--overlap-ms", type=float)
    sp.add_argument("--diffusion-steps", type=int)
    sp.add_argument("--beta-min", type=float)
    sp.add_argument("--beta-max", type=float)
    sp.add_argument("--rate", type=int)
    sp.add_argument("--layers", type=int)
    sp.add_argument("--channels", type=int)
    sp.add_argument("--dilation-cycle", help="comma-separated dilations")
    sp.add_argument("--checkpoint-every", type=int)
    sp.add_argument("--precision", choices=["float32", "float64"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--resume", help="continue from a checkpoint with training state")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("train-predictor", help="train a duration or energy predictor")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--which", choices=["duration", "energy"], required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--batch-size", type=int, default=16)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--rate", type=int, default=22050)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_train_predictor)

    sp = sub.add_parser("predict", help="fill missing durations/energies in a synthesis spec")
    sp.add_argument("spec")
    sp.add_argument("--duration-model")
    sp.add_argument("--energy-model")
    sp.add_argument("--force-energy", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("synth", help="conditional synthesis from a phoneme spec")
    sp.add_argument("checkpoint")
    sp.add_argument("spec")
    sp.add_argument("out")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--energy", choices=["given", "predicted"], default="given")
    sp.add_argument("--pitch")
    sp.add_argument("--duration-model")
    sp.add_argument("--energy-model")
    sp.add_argument("--frame-ms", type=float)
    sp.add_argument("--overlap-ms", type=float)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("generate", help="unconditional generation")
    sp.add_argument("checkpoint")
    sp.add_argument("out")
    sp.add_argument("--frames", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--frame-ms", type=float)
    sp.add_argument("--overlap-ms", type=float)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("eval", help="seams | memory | variance reports")
    esub = sp.add_subparsers(dest="what", required=True)
    e = esub.add_parser("seams")
    e.add_argument("wav")
    e.add_argument("--out", required=True)
    e.add_argument("--reference")
    e.add_argument("--frame-ms", type=float)
    e.add_argument("--overlap-ms", type=float)
    e.set_defaults(func=cmd_eval)
    e = esub.add_parser("memory")
    e.add_argument("checkpoint")
    e.add_argument("--lengths", type=float, nargs="+", default=[4, 8, 16, 32, 64])
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.add_argument("--plot")
    e.set_defaults(func=cmd_eval)
    e = esub.add_parser("variance")
    e.add_argument("checkpoint")
    e.add_argument("spec")
    e.add_argument("--k", type=int, default=5)
    e.add_argument("--seeds", type=int, nargs="+")
    e.add_argument("--compare", help="second checkpoint for a paired comparison")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FrameDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except MemoryError as exc:
        print(f"error: out of memory ({exc})", file=sys.stderr)
        return ResourceError.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
