"""Command line for training, coding, and evaluating models.

Exit codes: 0 success, 2 usage or configuration mistakes, 3 unreadable or
mismatched input files, 4 numerical failure during training.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import dsp
from .bitstream import check_compatible, header_for, read_bitstream, write_bitstream
from .config import SCENARIOS, VnscConfig, load_config
from .errors import (ConfigurationError, IngestionError, NumericalError,
                     UsageError)
from .model import VnscModel
from .training import CONFIG_FILE, Trainer, load_model
from .vision import read_lips


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vnsc", description="Neural speech codec with optional lip-image fusion.")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a directory of utterances")
    t.add_argument("--data", required=True, help="directory of .wav (+ matching .lips) files")
    t.add_argument("--out", required=True, help="checkpoint directory to write")
    t.add_argument("--scenario", choices=SCENARIOS, default="audio")
    t.add_argument("--config", help="config file; overrides --scenario and --miniature")
    t.add_argument("--miniature", action="store_true", help="desk-scale preset")
    t.add_argument("--steps", type=int, help="train exactly this many steps")
    t.add_argument("--epochs", type=int, help="override the configured epoch count")
    t.add_argument("--seed", type=int, help="override the configured seed")
    t.add_argument("--resume", action="store_true",
                   help="continue from the checkpoint in --out")
    t.add_argument("--quiet", action="store_true", help="suppress per-step loss lines")

    e = sub.add_parser("encode", help="code a waveform to a bitstream")
    e.add_argument("--model", required=True, help="checkpoint directory")
    e.add_argument("--in", dest="infile", required=True, help="input .wav")
    e.add_argument("--out", required=True, help="output bitstream path")
    e.add_argument("--lips", help="lip video file (required for va models)")
    e.add_argument("--noise-snr", type=float,
                   help="add noise to the input at this SNR in dB before coding")
    e.add_argument("--seed", type=int, default=0, help="noise seed")

    d = sub.add_parser("decode", help="reconstruct a waveform from a bitstream")
    d.add_argument("--model", required=True, help="checkpoint directory")
    d.add_argument("--in", dest="infile", required=True, help="input bitstream")
    d.add_argument("--out", required=True, help="output .wav")

    v = sub.add_parser("eval", help="code every utterance in a directory and report quality")
    v.add_argument("--model", required=True, help="checkpoint directory")
    v.add_argument("--data", required=True, help="directory of .wav (+ .lips) files")
    v.add_argument("--noise-snr", type=float,
                   help="add noise to each input at this SNR in dB before coding")
    v.add_argument("--seed", type=int, default=0, help="noise seed")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse prints its own message
        return int(e.code or 0)
    try:
        return _dispatch(args)
    except (UsageError, ConfigurationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except IngestionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError) as e:
        print(f"error: cannot read {e.filename}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


def _dispatch(args) -> int:
    return {"train": _train, "encode": _encode, "decode": _decode, "eval": _eval}[
        args.command](args)


# -- subcommands ------------------------------------------------------------------


def _train(args) -> int:
    if args.resume:
        if not os.path.exists(os.path.join(args.out, CONFIG_FILE)):
            raise UsageError(f"--resume needs an existing checkpoint in {args.out}")
        scenario = load_config(os.path.join(args.out, CONFIG_FILE)).scenario
        dataset = _load_dataset(args.data, need_lips=scenario != "audio")
        trainer = Trainer.restore(args.out, dataset)
    else:
        if args.config:
            cfg = load_config(args.config)
        elif args.miniature:
            cfg = VnscConfig.miniature(args.scenario)
        else:
            cfg = VnscConfig.for_scenario(args.scenario)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.epochs is not None:
            cfg = replace(cfg, epochs=args.epochs)
        cfg.validate()
        dataset = _load_dataset(args.data, need_lips=cfg.scenario != "audio")
        trainer = Trainer(VnscModel(cfg).initialize(cfg.seed), dataset, cfg)

    log = None if args.quiet else (lambda r: print(r.line()))
    trainer.train(n_steps=args.steps, log=log)
    trainer.save_checkpoint(args.out)
    metrics = trainer.evaluate()
    print(f"checkpoint={args.out} steps={trainer.global_step} "
          f"eval_l_mdct={metrics['l_mdct']:.6f} eval_ssnr={metrics['ssnr']:.2f}")
    return 0


def _encode(args) -> int:
    model = load_model(args.model)
    wave = dsp.read_wav(args.infile)
    if args.noise_snr is not None:
        noisy = dsp.add_noise(wave.samples, args.noise_snr, args.seed)
        wave = dsp.Waveform(noisy.astype(np.float32))

    lips = None
    fps = 60.0
    if model.cfg.scenario == "va":
        if not args.lips:
            raise UsageError("a va model fuses lip images; pass --lips")
        lips, (num, den) = read_lips(args.lips)
        fps = num / den
    elif args.lips:
        raise UsageError(f"a {model.cfg.scenario} model takes no --lips input")

    indices = model.encode_wave(wave, lips, fps)
    write_bitstream(args.out, indices, model.cfg)
    header = header_for(model.cfg, indices.shape[1])
    print(f"wrote {args.out}: {header.bitrate():.0f} bit/s, "
          f"{header.duration():.3f} s coded")
    return 0


def _decode(args) -> int:
    indices, header = read_bitstream(args.infile)
    model = load_model(args.model)
    check_compatible(header, model.cfg)
    wave = model.decode_wave(indices)
    dsp.write_wav(args.out, wave)
    print(f"wrote {args.out}: {wave.duration:.3f} s")
    return 0


def _eval(args) -> int:
    model = load_model(args.model)
    need_lips = model.cfg.scenario == "va"
    items = _load_dataset(args.data, need_lips=need_lips, with_names=True)
    snrs, errs = [], []
    for k, (name, wave, frames, fps) in enumerate(items):
        coded_wave = wave
        if args.noise_snr is not None:
            noisy = dsp.add_noise(wave.samples, args.noise_snr, args.seed + k)
            coded_wave = dsp.Waveform(noisy.astype(np.float32))
        lips = frames if need_lips else None
        decoded = model.decode_wave(model.encode_wave(coded_wave, lips, fps))
        spec = dsp.mdct(wave.samples)
        dec_spec = dsp.mdct(decoded.samples)
        n = min(spec.shape[1], dec_spec.shape[1])
        err = float(np.mean((spec[:, :n] - dec_spec[:, :n]) ** 2))
        snr = dsp.ssnr(wave.samples, decoded.samples)
        print(f"item={name} ssnr={snr:.2f} l_mdct={err:.6f}")
        snrs.append(snr)
        errs.append(err)
    header = header_for(model.cfg, 1)
    print(f"mean_ssnr={np.mean(snrs):.2f} mean_l_mdct={np.mean(errs):.6f} "
          f"bitrate={header.bitrate():.0f}")
    return 0


# -- input discovery --------------------------------------------------------------


def _load_dataset(dirpath, need_lips: bool, with_names: bool = False) -> list:
    if not os.path.isdir(dirpath):
        raise IngestionError(f"{dirpath} is not a directory")
    names = sorted(n for n in os.listdir(dirpath) if n.endswith(".wav"))
    if not names:
        raise IngestionError(f"no .wav files in {dirpath}")
    items = []
    for name in names:
        wave = dsp.read_wav(os.path.join(dirpath, name))
        lips_path = os.path.join(dirpath, name[:-4] + ".lips")
        frames = None
        fps = 60.0
        if os.path.exists(lips_path):
            frames, (num, den) = read_lips(lips_path)
            fps = num / den
        elif need_lips:
            raise IngestionError(f"missing lip video for {name}")
        entry = (wave, frames, fps)
        items.append((name, *entry) if with_names else entry)
    return items


if __name__ == "__main__":
    sys.exit(main())
