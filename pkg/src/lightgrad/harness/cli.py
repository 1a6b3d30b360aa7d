"""Command-line entry point: ``python -m lightgrad.harness.cli <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from ..checkpoint import read_checkpoint
from ..errors import ConfigError, LightGradError
from ..samplers import GaussianTestbed, SamplerConfig
from . import bench as bench_mod
from . import config as config_io
from . import train as train_mod
from .config import GRID_ALIASES, METHOD_ALIASES, TrainConfig
from .corpus import gen_toy_corpus, load_corpus
from .melio import read_mel, write_mel
from .metrics import mcd

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3

log = logging.getLogger("lightgrad")


class UsageError(Exception):
    pass


def _sampler_flags(p):
    p.add_argument("--nfe", type=int, help="score-network evaluations")
    p.add_argument("--tau", type=float, help="prior temperature (default 1.5)")
    p.add_argument("--method", choices=("sde-euler", "ode-euler", "dpm1"))
    p.add_argument("--grid", choices=("t", "lambda"), help="time grid spacing (default per method)")
    p.add_argument("--seed", type=int)


def _ids_arg(p):
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--phonemes", required=True, help="space-separated phoneme tokens")
    p.add_argument("--durations", help="space-separated frame counts overriding the predictor")
    p.add_argument("--out", required=True, help="output mel file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lightgrad",
                                 description="Train, sample and benchmark the diffusion acoustic model.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-utts", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-mels", type=int, default=20)

    p = sub.add_parser("train", help="train on a corpus directory")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--log", help="loss-curve file (default: <out>.log)")
    p.add_argument("--resume", action="store_true", help="continue from --out")

    for name in ("synth", "synth-stream"):
        p = sub.add_parser(name, help="synthesise a mel file" + (" chunk by chunk" if "stream" in name else ""))
        _ids_arg(p)
        _sampler_flags(p)
        p.add_argument("--config", help="override the sampler fields stored in the checkpoint")
        if name == "synth-stream":
            p.add_argument("--min-frames", type=int, default=22)
            p.add_argument("--max-frames", type=int, default=43)
            p.add_argument("--workers", type=int, default=0)

    p = sub.add_parser("bench", help="latency / RTF / memory table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--phonemes", action="append", default=[], help="utterance (repeatable)")
    p.add_argument("--corpus", help="take utterances from this corpus instead")
    p.add_argument("--n-utts", type=int, default=4)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--tau", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", help="also write the CSV here")

    p = sub.add_parser("mcd", help="mel cepstral distortion between two mel files")
    p.add_argument("ref")
    p.add_argument("hyp")

    p = sub.add_parser("solver-compare", help="error-vs-NFE CSV on the Gaussian testbed")
    p.add_argument("--nfe", default="1,2,4,8,10,16,32", help="comma-separated NFE list")
    p.add_argument("--method", choices=("ode-euler", "dpm1"), action="append")
    p.add_argument("--grid", choices=("t", "lambda"))
    p.add_argument("--offset", type=float, default=3.0, help="data mean minus prior mean")
    p.add_argument("--spread", type=float, default=0.15, help="data standard deviation")
    p.add_argument("--tau", type=float, default=1.5)
    p.add_argument("--config", help="schedule parameters")
    p.add_argument("--csv", help="write here instead of stdout")
    return ap


def _train(args) -> int:
    utts = load_corpus(args.corpus)
    state = None
    if args.resume:
        state = train_mod.load(args.out)
        cfg = state.cfg
    else:
        cfg = config_io.load(args.config) if args.config else TrainConfig(n_mels=utts[0].mel.shape[0])
    cfg = config_io.apply_overrides(cfg, args.set)
    if args.iterations is not None:
        cfg = cfg.replace(iterations=args.iterations)
    if args.seed is not None:
        if args.resume:
            raise UsageError("--seed cannot change on resume")
        cfg = cfg.replace(seed=args.seed)
    if state is not None:
        state.cfg = cfg
    log_path = args.log or f"{args.out}.log"
    state = train_mod.train(cfg, utts, args.out, log_path, state)
    print(f"trained to iteration {state.iteration}; checkpoint {args.out}; log {log_path}")
    return EXIT_OK


def _sampler(cfg: TrainConfig, args) -> SamplerConfig:
    if getattr(args, "config", None):
        cfg = config_io.loads(Path(args.config).read_text(), base=cfg, path=args.config)
    changes = {k: getattr(args, k) for k in ("nfe", "tau", "method", "grid", "seed")
               if getattr(args, k) is not None}
    return cfg.replace(**changes).sampler()


def _synth(args, streaming: bool) -> int:
    state = train_mod.load(args.checkpoint)
    ids = state.vocab.encode(args.phonemes.split())
    dur = [int(v) for v in args.durations.split()] if args.durations else None
    scfg = _sampler(state.cfg, args)
    if streaming:
        syn = state.model.synthesize_streaming(ids, scfg, durations=dur, workers=args.workers,
                                               min_frames=args.min_frames, max_frames=args.max_frames)
    else:
        syn = state.model.synthesize(ids, scfg, durations=dur)
    write_mel(args.out, syn.mel.numpy())
    print(f"wrote {args.out}: {syn.mel.shape[1]} frames ({scfg.method}, NFE={scfg.nfe}, tau={scfg.temperature})")
    return EXIT_OK


def _bench(args) -> int:
    state = train_mod.load(args.checkpoint)
    if args.corpus:
        utts = [state.vocab.encode(u.tokens) for u in load_corpus(args.corpus)[:args.n_utts]]
    else:
        utts = [state.vocab.encode(p.split()) for p in args.phonemes]
    if not utts:
        raise UsageError("bench needs --phonemes or --corpus")
    params = train_mod.parameter_count(read_checkpoint(args.checkpoint))
    report = bench_mod.bench(state.model, utts, repeats=args.repeats, warmup=args.warmup,
                             seed=args.seed, tau=args.tau, params=params)
    print(report.table())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return EXIT_OK


def _solver_compare(args) -> int:
    cfg = config_io.load(args.config) if args.config else TrainConfig()
    try:
        nfes = [int(v) for v in args.nfe.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --nfe list {args.nfe!r}") from None
    methods = [METHOD_ALIASES[m] for m in (args.method or ["ode-euler", "dpm1"])]
    sched = cfg.schedule()
    tb = GaussianTestbed(sched, args.offset, args.spread)
    torch_x = torch.linspace(-2.0, 2.0, 9, dtype=torch.float64) / args.tau ** 0.5
    mu = torch.zeros_like(torch_x)
    ref = tb.rk4_reference(torch_x, mu)
    spacing = GRID_ALIASES.get(args.grid)
    lines = ["method,nfe,grid,error"]
    for m in methods:
        for n in nfes:
            err = tb.endpoint_error(m, n, torch_x, mu, reference=ref, spacing=spacing)
            lines.append(f"{m},{n},{spacing or 'default'},{err:.6e}")
    text = "\n".join(lines) + "\n"
    if args.csv:
        Path(args.csv).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "gen-toy":
            utts = gen_toy_corpus(args.n_utts, args.seed, args.out, args.n_mels)
            print(f"wrote {len(utts)} utterances to {args.out}")
            return EXIT_OK
        if args.command == "train":
            return _train(args)
        if args.command in ("synth", "synth-stream"):
            return _synth(args, args.command == "synth-stream")
        if args.command == "bench":
            return _bench(args)
        if args.command == "mcd":
            print(f"{mcd(read_mel(args.ref), read_mel(args.hyp)):.4f}")
            return EXIT_OK
        return _solver_compare(args)
    except (UsageError, ConfigError) as exc:
        print(f"lightgrad {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LightGradError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"lightgrad {args.command}: {msg}", file=sys.stderr)
        return EXIT_DATA


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
