"""Command-line pipeline: feature extraction, synthetic corpora, training,
generation, evaluation, rendering, and file inspection.

Every subcommand echoes its resolved configuration (including the seed) as a
single JSON line before doing any work, exits 0 on success, and reports
failures as one machine-parseable line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import torch

from . import audio as audio_mod
from . import metrics as metrics_mod
from . import synthetic as synth_mod
from .binio import FormatError, Reader, read_file
from .denoiser import CHECKPOINT_MAGIC, DenoiserConfig, load_model
from .inference import GenerateConfig, generate, stitch_report
from .motion import (
    CKPC_MAGIC,
    MSEQ_MAGIC,
    canonical_layout,
    load_keypoints,
    load_sequence,
    motion_dim,
    save_keypoints,
    save_sequence,
)
from .render import render_sequence
from .training import TrainConfig, train


def echo_config(command: str, resolved: dict) -> None:
    print(json.dumps({"command": command, "config": resolved}, sort_keys=True))


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    return data


def _merge(file_cfg: dict, section: str, flag_values: dict) -> dict:
    """Config-file values under `section`, overridden by non-None flags."""
    merged = dict(file_cfg.get(section, {}))
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    return merged


def _load_audio_features(path: str, n_mels: int, fps: float) -> audio_mod.AudioFeatureSequence:
    p = Path(path)
    if p.suffix == ".afs":
        return audio_mod.load_features(p)
    samples, rate = audio_mod.load_wav(p)
    cfg = audio_mod.MelConfig(sample_rate=rate, n_mels=n_mels, fps=fps)
    return audio_mod.extract_logmel(samples, rate, cfg)


def _collect_pairs(data_dir: Path, n_mels: int):
    """(MotionSequence, AudioFeatureSequence) pairs from a corpus directory.

    Directories written by synth-data carry a manifest.json; otherwise pairs
    are matched by file stem (stem.mseq plus stem.afs or stem.wav).
    """
    manifest = data_dir / "manifest.json"
    pairs = []
    if manifest.exists():
        meta = json.loads(manifest.read_text())
        for entry in meta["pairs"]:
            mseq = load_sequence(data_dir / entry["mseq"])
            feats = _load_audio_features(str(data_dir / entry["wav"]), n_mels, mseq.fps)
            pairs.append((mseq, feats))
        return pairs
    for mseq_path in sorted(data_dir.glob("*.mseq")):
        mseq = load_sequence(mseq_path)
        afs = mseq_path.with_suffix(".afs")
        wav = mseq_path.with_suffix(".wav")
        if afs.exists():
            feats = audio_mod.load_features(afs)
        elif wav.exists():
            feats = _load_audio_features(str(wav), n_mels, mseq.fps)
        else:
            raise FileNotFoundError(f"no .afs or .wav next to {mseq_path}")
        pairs.append((mseq, feats))
    if not pairs:
        raise FileNotFoundError(f"no training pairs found in {data_dir}")
    return pairs


def cmd_extract_features(args) -> int:
    cfg = audio_mod.MelConfig(
        sample_rate=args.sample_rate, n_mels=args.n_mels, win_ms=args.win_ms,
        fps=args.fps, fmin=args.fmin, fmax=args.fmax,
    )
    echo_config("extract-features", {"wav": args.wav, "out": args.out, **asdict(cfg)})
    samples, rate = audio_mod.load_wav(args.wav)
    feats = audio_mod.extract_logmel(samples, rate, cfg)
    audio_mod.save_features(feats, args.out)
    print(f"wrote {args.out}: {len(feats)} frames x {feats.dim} dims at {feats.fps} fps")
    return 0


def cmd_synth_data(args) -> int:
    spec = synth_mod.SyntheticSpec(
        n_sequences=args.n, duration_range=(args.duration_min, args.duration_max),
        k=args.k, fps=args.fps,
    )
    echo_config("synth-data", {"out": args.out, "seed": args.seed, **asdict(spec)})
    corpus = synth_mod.make_corpus(spec, args.seed)
    manifest = synth_mod.write_corpus(corpus, args.out)
    if args.keypoints:
        save_keypoints(canonical_layout(spec.k), Path(args.out) / "canonical.ckpc")
    print(f"wrote {len(corpus)} sequences to {args.out} (manifest {manifest})")
    return 0


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    train_kwargs = _merge(file_cfg, "train", {
        "lr": args.lr, "batch_size": args.batch_size, "steps": args.steps,
        "lambda_vel": args.lambda_vel, "lambda_smooth": args.lambda_smooth,
        "lambda_exp": args.lambda_exp, "cond_drop_p": args.cond_drop_p,
        "truncation": None if args.truncation is None else args.truncation,
        "min_len": args.min_len, "diffusion_steps": args.diffusion_steps,
        "schedule": args.schedule, "seed": args.seed,
        "checkpoint_every": args.checkpoint_every,
    })
    train_cfg = TrainConfig(**train_kwargs)

    data_dirs = []
    for spec in args.data:
        path, _, repeat = spec.partition(":")
        data_dirs.extend([Path(path)] * (int(repeat) if repeat else 1))
    pairs = []
    n_mels = args.n_mels
    for d in data_dirs:
        pairs.extend(_collect_pairs(d, n_mels))
    k = pairs[0][0].k
    d_a = pairs[0][1].dim

    model_kwargs = _merge(file_cfg, "denoiser", {
        "layers": args.layers, "heads": args.heads, "dim": args.dim,
        "ff_dim": args.ff_dim, "w_pre": args.w_pre, "w_cur": args.w_cur,
        "dropout": args.dropout,
    })
    model_cfg = DenoiserConfig(d_m=motion_dim(k), d_a=d_a, **model_kwargs)

    echo_config("train", {
        "data": args.data, "out": args.out, "log": args.log,
        "train": asdict(train_cfg), "denoiser": asdict(model_cfg),
    })

    def progress(step, comps):
        if step % max(1, train_cfg.steps // 20) == 0 or step == train_cfg.steps:
            print(f"step {step}/{train_cfg.steps} total={comps['total']:.5f} "
                  f"simple={comps['simple']:.5f}")

    state = train(pairs, train_cfg, model_cfg, checkpoint_path=args.out,
                  log_path=args.log, progress=progress)
    print(f"wrote checkpoint {args.out} after {state.step} steps")
    return 0


def cmd_generate(args) -> int:
    cfg = GenerateConfig(
        cfg_scale=args.cfg_scale, sampler=args.sampler, sample_steps=args.steps,
        seed=args.seed,
    )
    echo_config("generate", {
        "model": args.model, "audio": args.audio, "out": args.out, **asdict(cfg),
    })
    model = load_model(args.model)
    feats = _load_audio_features(args.audio, model.config.d_a, args.fps)
    seq = generate(model, feats, cfg)
    save_sequence(seq, args.out)
    report = stitch_report(seq, model.config.w_cur)
    print(f"wrote {args.out}: {len(seq)} frames, K={seq.k}, fps={seq.fps}; "
          f"junctions={report.n_junctions} junction_p95={report.junction_p95:.4f} "
          f"within_p95={report.within_p95:.4f}")
    return 0


def _gather(path_or_dir: str, suffix: str) -> list[Path]:
    p = Path(path_or_dir)
    if p.is_dir():
        files = sorted(p.glob(f"*{suffix}"))
        if not files:
            raise FileNotFoundError(f"no {suffix} files in {p}")
        return files
    return [p]


def cmd_eval(args) -> int:
    echo_config("eval", {
        "gen": args.gen, "ref": args.ref, "audio": args.audio,
        "channel": args.channel, "out": args.out,
    })
    gen_paths = _gather(args.gen, ".mseq")
    gen_seqs = [load_sequence(p) for p in gen_paths]

    rows = []
    audio_paths: list[Path | None]
    if args.audio:
        audio_paths = _gather(args.audio, ".afs") if Path(args.audio).is_dir() else [Path(args.audio)]
        if len(audio_paths) not in (1, len(gen_paths)):
            raise ValueError(
                f"{len(audio_paths)} audio files cannot pair with {len(gen_paths)} sequences"
            )
        if len(audio_paths) == 1:
            audio_paths = audio_paths * len(gen_paths)
    else:
        audio_paths = [None] * len(gen_paths)

    for path, seq, audio_path in zip(gen_paths, gen_seqs, audio_paths):
        row = {"sequence": path.name, "frames": len(seq),
               "smoothness": f"{metrics_mod.smoothness(seq):.6f}", "audio_corr": ""}
        if audio_path is not None:
            feats = _load_audio_features(str(audio_path), 80, seq.fps)
            row["audio_corr"] = f"{metrics_mod.audio_motion_corr(seq, feats, args.channel):.6f}"
        rows.append(row)

    fd_value = ""
    if args.ref:
        ref_seqs = [load_sequence(p) for p in _gather(args.ref, ".mseq")]
        fd_value = f"{metrics_mod.motion_frechet(ref_seqs, gen_seqs):.6f}"

    header = ["sequence", "frames", "smoothness", "audio_corr", "frechet_vs_ref"]
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        for i, row in enumerate(rows):
            writer.writerow({**row, "frechet_vs_ref": fd_value if i == 0 else ""})

    widths = [max(len(h), 12) for h in header]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for i, row in enumerate(rows):
        vals = [str(row["sequence"]), str(row["frames"]), row["smoothness"],
                row["audio_corr"], fd_value if i == 0 else ""]
        print("  ".join(v.ljust(w) for v, w in zip(vals, widths)))
    print(f"wrote {args.out}")
    return 0


def cmd_render(args) -> int:
    echo_config("render", {
        "keypoints": args.keypoints, "motion": args.motion, "out": args.out,
        "size": args.size,
    })
    xc = load_keypoints(args.keypoints)
    seq = load_sequence(args.motion)
    paths = render_sequence(xc, seq, args.out, image_size=args.size)
    print(f"wrote {len(paths)} frames to {args.out}")
    return 0


def cmd_inspect(args) -> int:
    echo_config("inspect", {"path": args.path})
    data = read_file(args.path)
    magic = data[:4]
    if magic == MSEQ_MAGIC:
        r = Reader(data, args.path)
        r.expect_magic(MSEQ_MAGIC)
        print(f"format=MSEQ version={r.u32()} frame_count={r.u32()} K={r.u32()} fps={r.f32():g}")
    elif magic == audio_mod.AFS_MAGIC:
        r = Reader(data, args.path)
        r.expect_magic(audio_mod.AFS_MAGIC)
        print(f"format=AFS version={r.u32()} N={r.u32()} D_a={r.u32()} fps={r.f32():g}")
    elif magic == CKPC_MAGIC:
        r = Reader(data, args.path)
        r.expect_magic(CKPC_MAGIC)
        print(f"format=CKPC K={r.u32()}")
    elif magic == CHECKPOINT_MAGIC:
        model = load_model(args.path)
        n_params = sum(p.numel() for p in model.parameters())
        cfg = model.config
        print(
            f"format=checkpoint version=1 layers={cfg.layers} heads={cfg.heads} "
            f"dim={cfg.dim} w_pre={cfg.w_pre} w_cur={cfg.w_cur} d_m={cfg.d_m} "
            f"d_a={cfg.d_a} params={n_params} diffusion_steps={model.diffusion_steps} "
            f"schedule={model.schedule_kind}"
        )
    else:
        raise FormatError(f"{args.path}: unrecognized magic {magic!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audiomotion",
        description="Audio-conditioned diffusion over facial motion parameters",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap internal torch parallelism")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-features", help="log-mel features from a WAV file")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--n-mels", type=int, default=80)
    p.add_argument("--win-ms", type=float, default=40.0)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--fmin", type=float, default=0.0)
    p.add_argument("--fmax", type=float, default=None)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("synth-data", help="generate a synthetic (audio, motion) corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--duration-min", type=float, default=4.0)
    p.add_argument("--duration-max", type=float, default=8.0)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--keypoints", action="store_true",
                   help="also write a canonical.ckpc keypoint file")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the motion denoiser")
    p.add_argument("--data", action="append", required=True,
                   help="corpus directory, optionally DIR:REPEAT; repeatable")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="append-only CSV loss log")
    p.add_argument("--config", default=None,
                   help='JSON config file with "train" and "denoiser" sections')
    p.add_argument("--n-mels", type=int, default=80)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lambda-vel", type=float, default=None)
    p.add_argument("--lambda-smooth", type=float, default=None)
    p.add_argument("--lambda-exp", type=float, default=None)
    p.add_argument("--cond-drop-p", type=float, default=None)
    p.add_argument("--truncation", action="store_true", default=None)
    p.add_argument("--no-truncation", dest="truncation", action="store_false")
    p.add_argument("--min-len", type=int, default=None)
    p.add_argument("--diffusion-steps", type=int, default=None)
    p.add_argument("--schedule", choices=["cosine", "linear"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--ff-dim", type=int, default=None)
    p.add_argument("--w-pre", type=int, default=None)
    p.add_argument("--w-cur", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate motion from audio")
    p.add_argument("--model", required=True)
    p.add_argument("--audio", required=True, help="WAV or AFS file")
    p.add_argument("--out", required=True, help="MSEQ output path")
    p.add_argument("--cfg-scale", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampler", choices=["full", "strided"], default="full")
    p.add_argument("--steps", type=int, default=50,
                   help="reverse steps for the strided sampler")
    p.add_argument("--fps", type=float, default=25.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="metrics report for generated motion")
    p.add_argument("--gen", required=True, help="MSEQ file or directory")
    p.add_argument("--ref", default=None, help="reference MSEQ file or directory")
    p.add_argument("--audio", default=None, help="AFS/WAV file or directory of .afs")
    p.add_argument("--channel", type=int, default=metrics_mod.DEFAULT_JAW_CHANNEL)
    p.add_argument("--out", required=True, help="CSV report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render motion onto canonical keypoints")
    p.add_argument("--keypoints", required=True, help="CKPC file")
    p.add_argument("--motion", required=True, help="MSEQ file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("inspect", help="print header metadata of a data file")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        torch.set_num_threads(max(1, args.threads))
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
