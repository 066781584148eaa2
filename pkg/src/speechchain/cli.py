"""Command-line entry point: ``speechchain <command> --config run.yaml ...``.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from .alignment import AlignmentError
from .corpus import CorpusError
from .engine import MODES as STREAM_MODES
from .engine import StreamError, run_stream, write_traces
from .pipeline import (
    INPUTS,
    MODES,
    REGIMES,
    ReportError,
    Run,
    build_report,
    load_run_config,
)
from .trainer import GREEDY, TEACHER_FORCING, ConfigError, DivergenceError

log = logging.getLogger("speechchain")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_DIVERGENCE = 0, 1, 2, 3


def resolve_config(name):
    """A path, or the name of a bundled config (``toy``, ``tiny``)."""
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("speechchain") / "configs" / f"{name}.yaml"
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"config {name!r} not found (neither a file nor a bundled config)")


def _run(args):
    cfg = load_run_config(resolve_config(args.config))
    return Run(cfg, args.output_dir)


def cmd_generate(args):
    run = _run(args)
    corpus = run.generate(force=args.force)
    print(f"wrote {len(corpus)} utterances to {run.corpus_dir}")


def cmd_train(args):
    run = _run(args)
    if args.stage == 1:
        done = run.train_stage1(args.mode, args.stop_after)
    else:
        inter = args.intermediate or run.cfg.stage2.intermediate
        done = run.train_stage2(args.mode, inter, args.stop_after)
    print(f"stage {args.stage} {args.mode}: {'finished' if done else 'paused, rerun to resume'}")


def cmd_eval(args):
    run = _run(args)
    out = run.evaluate(args.regime, args.mode, args.input, args.split)
    print(json.dumps(out, sort_keys=True))


def cmd_report(args):
    if args.run_dir is not None:
        root = Path(args.run_dir)
        cfg = None
    else:
        run = _run(args)
        root, cfg = run.root, run.cfg
    print(build_report(root, cfg), end="")


def cmd_align(args):
    run = _run(args)
    for path in run.export_alignments(args.split or None):
        print(f"wrote {path}")


def cmd_stream(args):
    run = _run(args)
    corpus = run.corpus()
    utts = {u.id: u for u in corpus[args.split]}
    if args.utt is None:
        utt = corpus[args.split][0]
    elif args.utt in utts:
        utt = utts[args.utt]
    else:
        raise ConfigError(f"utterance {args.utt!r} not in split {args.split!r}")
    rec_name, syn_name = run.components(args.regime, "incremental")
    rec = run.load_component(rec_name) if args.mode != "itts" else None
    syn = run.load_component(syn_name) if args.mode != "isr" else None
    source = utt.features if args.mode in ("isr", "isr_to_itts") else corpus.vocab.encode(utt.text)
    res = run_stream(args.mode, source, run.cfg.block, run.cfg.frame_spec, rec, syn,
                     wait_for_look_ahead=not args.strict)
    out = Path(args.out) if args.out else run.root / "traces" / f"{args.mode}__{utt.id}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_traces(out, res.traces)
    if res.tokens:
        print(f"text: {corpus.vocab.decode(res.tokens)}")
    if res.frames is not None:
        print(f"frames: {res.frames.shape[0]}")
    print(f"wrote {len(res.traces)} step records to {out}")


def cmd_run(args):
    run = _run(args)
    print(run.run_all(force=args.force), end="")


def build_parser():
    ap = argparse.ArgumentParser(prog="speechchain", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p, required=True):
        p.add_argument("--config", required=required, help="run config (yaml/json path, or 'toy'/'tiny')")
        p.add_argument("--output-dir", help="override the config's output_dir")
        return p

    p = with_config(sub.add_parser("generate", help="generate the synthetic corpus"))
    p.add_argument("--force", action="store_true", help="overwrite an existing corpus")
    p.set_defaults(fn=cmd_generate)

    p = with_config(sub.add_parser("train", help="train one stage"))
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--mode", choices=MODES, default="incremental")
    p.add_argument("--intermediate", choices=(TEACHER_FORCING, GREEDY), default=None,
                   help="stage 2 only; defaults to stage2.intermediate from the config")
    p.add_argument("--stop-after", type=int, default=None, help="pause after this many epochs")
    p.set_defaults(fn=cmd_train)

    p = with_config(sub.add_parser("eval", help="evaluate one table cell pair"))
    p.add_argument("--regime", choices=REGIMES, default="indep")
    p.add_argument("--mode", choices=MODES, default="incremental")
    p.add_argument("--input", choices=INPUTS, default="natural")
    p.add_argument("--split", choices=("dev", "test"), default=None)
    p.set_defaults(fn=cmd_eval)

    p = with_config(sub.add_parser("report", help="build the results table"), required=False)
    p.add_argument("--run-dir", help="run directory (instead of --config)")
    p.set_defaults(fn=cmd_report)

    p = with_config(sub.add_parser("align", help="export teacher alignments"))
    p.add_argument("--split", action="append", help="split to export (repeatable)")
    p.set_defaults(fn=cmd_align)

    p = with_config(sub.add_parser("stream", help="stream one utterance and write step traces"))
    p.add_argument("--mode", choices=STREAM_MODES, default="isr_to_itts")
    p.add_argument("--regime", choices=REGIMES, default="indep")
    p.add_argument("--split", default="dev")
    p.add_argument("--utt", help="utterance id (default: first in split)")
    p.add_argument("--strict", action="store_true",
                   help="chained modes: consume each producer step before the next (padded look-ahead)")
    p.add_argument("--out", help="trace file (default: <run>/traces/...)")
    p.set_defaults(fn=cmd_stream)

    p = with_config(sub.add_parser("run", help="full pipeline: generate, train, evaluate, report"))
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_run)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "report" and args.config is None and args.run_dir is None:
        print("error: report needs --config or --run-dir", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        args.fn(args)
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, CorpusError, AlignmentError, ReportError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (StreamError, RuntimeError, ValueError, KeyError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
