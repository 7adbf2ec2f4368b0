"""Command line entry point: generate, train, diarize, score, sweep."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .audio import UnsupportedAudioError, read_wav
from .core import Config, Diarization, dump_config, group_records, load_config, parse_rttm, serialize_rttm
from .features import load_corpus, make_synthetic_corpus, save_corpus
from .fusion import exact_face_scorer
from .pipeline import diarize_audio, evaluate_corpus, missing_rate_sweep
from .relation import load_checkpoint, masks_csv, save_checkpoint
from .scoring import compute_der, format_report, report_csv
from .training import train, training_log_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
SPLITS = ("train", "val", "test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> Config:
    cfg = load_config(Path(args.config).read_text()) if args.config else Config()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _rttm_files(path: Path) -> list[Path]:
    return sorted(path.glob("*.rttm")) if path.is_dir() else [path]


def _read_diarizations(path: Path):
    records = []
    for f in _rttm_files(path):
        records += parse_rttm(f.read_text())
    return group_records(records)


def cmd_generate(args) -> int:
    cfg = _config(args)
    n = args.videos
    n_val = args.val_videos if args.val_videos is not None else min(10, max(1, n // 5))
    n_test = args.test_videos if args.test_videos is not None else min(10, max(1, n // 5))
    if n - n_val - n_test < 2:
        raise UsageError("need at least two training videos after the val/test split")
    max_spk = args.speakers
    min_spk = min(args.min_speakers, max_spk)
    corpus = make_synthetic_corpus(n, (min_spk, max_spk), args.off_screen, args.segs,
                                   args.sigma, cfg.seed, cfg)
    out = Path(args.out)
    bounds = {"train": (0, n - n_val - n_test), "val": (n - n_val - n_test, n - n_test),
              "test": (n - n_test, n)}
    for split, (a, b) in bounds.items():
        save_corpus(corpus.subset(a, b), out / split, split)
    (out / "config.txt").write_text(dump_config(cfg))
    print(f"wrote {n} videos to {out} ({bounds['train'][1]} train, {n_val} val, {n_test} test)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.iterations is not None:
        cfg = cfg.replace(iterations=args.iterations)
    root = Path(args.corpus)
    corpus_train, corpus_val = load_corpus(root / "train"), load_corpus(root / "val")
    scorer = train(corpus_train, corpus_val, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(scorer.model, scorer.threshold, out / "model.ckpt")
    (out / "masks.csv").write_text(masks_csv(scorer.model))
    (out / "train_log.csv").write_text(training_log_csv(scorer))
    val_rows = ["iteration,threshold,der_pct"] + [
        f"{it},{thr:.2f},{der:.4f}" for it, thr, der in scorer.validation_log]
    (out / "validation.csv").write_text("\n".join(val_rows) + "\n")
    print(f"threshold {scorer.threshold:.2f}; checkpoint written to {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_diarize(args) -> int:
    cfg = _config(args)
    model, threshold = load_checkpoint(args.checkpoint)
    if (model.c_audio, model.c_face, model.h, model.w) != (cfg.c_audio, cfg.c_face, cfg.h, cfg.w):
        raise ValueError("checkpoint dims do not match the configuration")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.wav:
        if args.corpus:
            raise UsageError("give either --corpus or --wav, not both")
        wav = Path(args.wav)
        signal = read_wav(wav.read_bytes(), cfg.sample_rate)
        file_id = wav.stem
        reference = None
        if args.vad == "oracle":
            if not args.ref:
                raise UsageError("--vad oracle needs --ref")
            refs = _read_diarizations(Path(args.ref))
            if file_id not in refs:
                raise ValueError(f"{args.ref} has no records for {file_id}")
            reference = refs[file_id]
        result = diarize_audio(signal, file_id, model, threshold, cfg, reference)
        hyps = {file_id: result.hypothesis}
    elif args.corpus:
        if args.vad == "energy":
            raise UsageError("synthetic corpora carry no audio; use --vad oracle")
        corpus = load_corpus(Path(args.corpus) / args.split)
        face = exact_face_scorer if args.alpha is not None else None
        _, hyps = evaluate_corpus(corpus, model, threshold, cfg, args.missing_rate, cfg.seed,
                                  face, args.alpha if args.alpha is not None else 0.5)
    else:
        raise UsageError("give --corpus or --wav")
    for file_id, hyp in hyps.items():
        (out / f"{file_id}.rttm").write_text(serialize_rttm(hyp.to_records()))
    print(f"wrote {len(hyps)} hypothesis RTTM file(s) to {out}")
    return EXIT_OK


def cmd_score(args) -> int:
    cfg = _config(args)
    collar = cfg.collar_s if args.collar is None else args.collar
    refs = _read_diarizations(Path(args.ref))
    hyps = _read_diarizations(Path(args.hyp))
    per_file = {}
    for file_id, ref in refs.items():
        hyp = hyps.get(file_id)
        if hyp is None:
            hyp = Diarization(file_id)
        per_file[file_id] = compute_der(ref, hyp, collar)
    print(format_report(per_file), end="")
    if args.out:
        Path(args.out).write_text(report_csv(per_file))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    model, threshold = load_checkpoint(args.checkpoint)
    corpus = load_corpus(Path(args.corpus) / args.split)
    result = missing_rate_sweep(corpus, model, threshold, cfg, seed=cfg.seed)
    csv = result.to_csv()
    print(csv, end="")
    if args.out:
        Path(args.out).write_text(csv)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="avrdiar", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--seed", type=int)
        return p

    p = common(sub.add_parser("generate", help="write a synthetic train/val/test corpus"))
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=120)
    p.add_argument("--val-videos", type=int)
    p.add_argument("--test-videos", type=int)
    p.add_argument("--speakers", type=int, default=8, help="maximum speakers per video")
    p.add_argument("--min-speakers", type=int, default=4)
    p.add_argument("--off-screen", type=float, default=0.25)
    p.add_argument("--segs", type=int, default=3, help="segments per speaker")
    p.add_argument("--sigma", type=float, default=0.1)
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("train", help="train the relation scorer"))
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("diarize", help="write hypothesis RTTMs"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--wav")
    p.add_argument("--ref", help="reference RTTM for oracle VAD in --wav mode")
    p.add_argument("--vad", choices=("energy", "oracle"), default="oracle")
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--alpha", type=float,
                   help="fuse with the exact synthetic face scorer at this weight")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diarize)

    p = common(sub.add_parser("score", help="DER of hypothesis against reference"))
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--collar", type=float)
    p.add_argument("--out", help="CSV report path")
    p.set_defaults(func=cmd_score)

    p = common(sub.add_parser("sweep", help="DER across evaluation missing rates"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"avrdiar {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, UnsupportedAudioError, KeyError) as exc:
        print(f"avrdiar {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
