"""Command-line entry point: ``frida <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from frida import __version__
from frida.config import RunConfig
from frida.dannib import MODES, DannConfig
from frida.datamodel import write_dataset
from frida.dgacgan import GanConfig, sample_features
from frida.errors import ConfigError, FridaError
from frida.evaluation import metrics_csv, project2d, write_projection, write_reports
from frida.numcore import RngStream
from frida.orchestrator import (SAMPLE, ablate_pair, evaluate_states, load_state, read_manifest,
                                resume, run)
from frida.synthgen import BenchmarkSpec, make_benchmark, write_benchmark

log = logging.getLogger("frida")


class _Parser(argparse.ArgumentParser):
    """Reports usage errors as a single stderr line."""

    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def _defaults_epilog() -> str:
    g, d, r = GanConfig(), DannConfig(), RunConfig()
    return (
        "defaults: "
        f"lr {d.lr}, adam betas {d.beta1}/{d.beta2}, batch {d.batch_size}, "
        f"Th {r.threshold}, per_class {r.per_class}, z_dim {g.z_dim}, "
        f"latent {d.latent_dim}, W {r.width}, beta {d.beta}, "
        f"epochs {g.epochs} (gan) / {d.epochs} (da), mode {d.mode}"
    )


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "paper_literal", False):
        overrides.append("da.beta=1.0")
    if getattr(args, "mode", None):
        overrides.append(f"da.mode={args.mode}")
    if overrides:
        base = cfg
        try:
            cfg = RunConfig.from_text("\n".join(overrides), base=base)
        except ConfigError as e:
            raise ConfigError(f"--set: {e}") from None
        cfg = replace(cfg, benchmark=base.benchmark, manifest=base.manifest)
    return cfg


def cmd_gen(args) -> int:
    if args.spec:
        p = Path(args.spec)
        if not p.is_file():
            raise ConfigError(f"spec file not found: {args.spec}")
        spec = BenchmarkSpec.from_text(p.read_text())
    else:
        spec = BenchmarkSpec()
    manifest = write_benchmark(make_benchmark(spec), args.out)
    (Path(args.out) / "spec.txt").write_text(spec.to_text())
    print(manifest)
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    result = run(cfg, out_dir=args.out, stop_after=args.stop_after)
    for k in range(result.matrix.T + 1):
        row = " ".join(f"{result.matrix.get(k, t):.4f}" for t in range(k + 1))
        print(f"time {k}: {row}")
    print(f"wrote {Path(args.out) / 'metrics.csv'}")
    return 0


def cmd_resume(args) -> int:
    for p in (args.state, args.data):
        if not Path(p).is_file():
            raise ConfigError(f"file not found: {p}")
    result = resume(args.state, args.data)
    k = result.matrix.T
    row = " ".join(f"{result.matrix.get(k, t):.4f}" for t in range(k + 1))
    print(f"time {k}: {row}")
    return 0


def _state_paths(path: Path):
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(32)
    if head.startswith(b"# FRIDA run manifest"):
        _, states = read_manifest(path)
        return [states[k] for k in sorted(states)]
    return [path]


def cmd_eval(args) -> int:
    if not Path(args.testdir).is_dir():
        raise ConfigError(f"test directory not found: {args.testdir}")
    matrix = evaluate_states(_state_paths(Path(args.state)), args.testdir)
    if args.out:
        write_reports(matrix, args.out)
    sys.stdout.write(metrics_csv(matrix))
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    if args.seeds:
        cfg = replace(cfg, ablate_seeds=args.seeds)
    sys.stdout.write(ablate_pair(cfg).table())
    return 0


def cmd_sample(args) -> int:
    state, cfg = load_state(args.state)
    if state.gan is None:
        raise ConfigError(f"{args.state} holds no generator (replay was disabled)")
    seed = cfg.seed if args.seed is None else args.seed
    data = sample_features(state.gan, args.tau, args.per_class, RngStream(seed).spawn(SAMPLE, args.tau))
    if args.out:
        write_dataset(data, args.out)
    else:
        for row, y in zip(data.features, data.labels):
            print(" ".join(format(v, ".17g") for v in row), int(y))
    if args.projection:
        coords, _, _ = project2d(data.features)
        write_projection(args.projection, coords, data.labels, np.full(data.n, args.tau), "synth")
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="frida", description="Incremental domain adaptation with generative feature replay.",
                epilog=_defaults_epilog(), formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen", help="write a synthetic benchmark", formatter_class=fmt)
    s.add_argument("--spec", help="benchmark spec file (key=value); default benchmark if omitted")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_gen)

    def run_options(s):
        s.add_argument("--config", help="run config file (key=value); built-in defaults if omitted")
        s.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key, e.g. gan.epochs=20 (repeatable)")
        s.add_argument("--paper-literal", action="store_true",
                       help="unweighted bottleneck regulariser (da.beta=1)")
        s.add_argument("--mode", choices=MODES, help="adaptation objective (default: config value)")

    s = sub.add_parser("run", help="run the full domain sequence", epilog=_defaults_epilog(),
                       formatter_class=fmt)
    run_options(s)
    s.add_argument("--out", required=True, help="run directory")
    s.add_argument("--stop-after", type=int, default=None, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("resume", help="continue a run with one more domain", formatter_class=fmt)
    s.add_argument("--state", required=True, help="state checkpoint inside a run directory")
    s.add_argument("--data", required=True, help="dataset file of the next domain")
    s.set_defaults(func=cmd_resume)

    s = sub.add_parser("eval", help="evaluate states on test sets", formatter_class=fmt)
    s.add_argument("--state", required=True, help="state checkpoint or run_manifest.txt")
    s.add_argument("--testdir", required=True, help="directory of domain_<k>.txt test sets")
    s.add_argument("--out", help="also write metrics.csv and report.json here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="compare the three adaptation objectives",
                       epilog=_defaults_epilog(), formatter_class=fmt)
    run_options(s)
    s.add_argument("--seeds", type=int, default=None, help="number of seeds (default: ablate.seeds)")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sample", help="draw replay features from a stored generator", formatter_class=fmt)
    s.add_argument("--state", required=True, help="state checkpoint")
    s.add_argument("--tau", type=int, required=True, help="domain to sample")
    s.add_argument("--per-class", type=int, default=RunConfig().per_class, help="samples per class")
    s.add_argument("--seed", type=int, default=None, help="sampling seed (default: run seed)")
    s.add_argument("--out", help="dataset file to write (default: stdout)")
    s.add_argument("--projection", help="also write a 2-D projection CSV here")
    s.set_defaults(func=cmd_sample)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FridaError, OSError, ValueError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"frida {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
