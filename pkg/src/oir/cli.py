"""Command-line entry point: ``oir {train,eval,relabel,buffer-inspect,embed-export}``.

Exit codes: 0 success, 2 bad config or arguments, 3 unreadable checkpoint,
4 malformed trajectory file, 5 LLM or embedding service failure,
6 bad buffer snapshot.
"""
from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as rc
from . import evalkit as ek
from . import relabeler as rl
from .embedding import EmbedderSpec, EmbeddingError, make_embedder
from .instruction_buffer import STATUS_NAMES, InstructionBuffer, SnapshotError
from .trajectory import TrajectoryFormatError, read_trajectories

EXIT_OK, EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_TRAJECTORY, EXIT_NETWORK, EXIT_SNAPSHOT = 0, 2, 3, 4, 5, 6

log = logging.getLogger("oir")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- train --------------------------------------------------------------------

def _new_run_dir(output_dir: Path) -> Path:
    stamp = dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    run_dir = output_dir / stamp
    n = 1
    while run_dir.exists():
        run_dir = output_dir / f"{stamp}-{n}"
        n += 1
    return run_dir


def _mark_latest(run_dir: Path) -> None:
    (run_dir.parent / "latest").write_text(run_dir.name + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    from .learner import train as tr

    if args.overrides and args.resume:
        raise CliError(EXIT_CONFIG, "overrides cannot be combined with --resume")
    if args.resume:
        try:
            trainer = tr.Trainer.from_checkpoint(args.resume)
        except tr.CheckpointError as exc:
            raise CliError(EXIT_CHECKPOINT, str(exc))
        run_dir = Path(args.run_dir) if args.run_dir else Path(args.resume).parent
    else:
        if not args.config:
            raise CliError(EXIT_CONFIG, "train needs --config (or --resume)")
        try:
            cfg = rc.load(args.config, args.overrides)
        except rc.ConfigError as exc:
            raise CliError(EXIT_CONFIG, str(exc))
        run_dir = Path(args.run_dir) if args.run_dir else _new_run_dir(Path(cfg.output_dir))
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.yaml").write_text(cfg.dumps(), encoding="utf-8")
        audit = run_dir / "llm_audit.jsonl" if cfg.audit_log else None
        trainer = tr.Trainer(cfg.train, cfg.env, cfg.embedder, cfg.llm, run_dir=run_dir, audit_log=audit,
                             suites=cfg.suites)
    try:
        art = tr.train(trainer.cfg, trainer=trainer, run_dir=run_dir, stop_after=args.stop_after)
    except (rl.LlmError, rl.ParseError, EmbeddingError) as exc:
        raise CliError(EXIT_NETWORK, str(exc))
    _mark_latest(run_dir)
    print(f"run directory: {run_dir}")
    if art.report is not None:
        s = art.report.summary()
        print(f"mean_success={s['mean_success']:.4f} completed={s['completed']} "
              f"aggregate_score={s['aggregate_score']:.4f}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------

def cmd_eval(args) -> int:
    from . import gridworld as gw
    from .learner import train as tr

    if args.episodes < 1:
        raise CliError(EXIT_CONFIG, "--episodes must be >= 1")
    try:
        net, meta = tr.load_network(args.checkpoint)
    except tr.CheckpointError as exc:
        raise CliError(EXIT_CHECKPOINT, str(exc))
    try:
        suite = ek.load_suite(args.suite, args.suites_file)
    except (KeyError, ValueError, OSError) as exc:
        raise CliError(EXIT_CONFIG, f"cannot load suite {args.suite!r}: {exc}")
    embedder = make_embedder(EmbedderSpec(**meta["embedder"]))
    cfg = ek.EvalConfig(args.episodes, args.seed, gw.EnvConfig(**meta["env"]))
    try:
        report = ek.run_suite(ek.GreedyQPolicy(net, embedder), suite, cfg)
    except EmbeddingError as exc:
        raise CliError(EXIT_NETWORK, str(exc))
    print(report.table(), end="")
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(f"eval_{suite.name}.jsonl")
    out.write_text(report.to_jsonl(), encoding="utf-8")
    print(f"report: {out}")
    return EXIT_OK


# -- relabel ------------------------------------------------------------------

def cmd_relabel(args) -> int:
    if args.k < 1:
        raise CliError(EXIT_CONFIG, "-k must be >= 1")
    spec = rl.LlmSpec()
    if args.config:
        try:
            spec = rc.load(args.config).llm
        except rc.ConfigError as exc:
            raise CliError(EXIT_CONFIG, str(exc))
    if args.endpoint:
        spec = rl.LlmSpec(**{**spec.__dict__, "endpoint": args.endpoint})
    try:
        trajs = read_trajectories(args.trajectories)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read {args.trajectories}: {exc.strerror or exc}")
    except TrajectoryFormatError as exc:
        raise CliError(EXIT_TRAJECTORY, f"{args.trajectories}: {exc}")
    try:
        sets = rl.relabel_many(trajs, args.mode, args.k, spec, fallback=not args.no_fallback) \
            if args.mode == "llm" else rl.relabel_many(trajs, "oracle", args.k)
    except (rl.LlmError, rl.ParseError) as exc:
        raise CliError(EXIT_NETWORK, str(exc))
    for cs in sets:
        print(json.dumps({"trajectory": cs.trajectory_id,
                          "candidates": [{"text": c.text, "source": c.source} for c in cs.candidates]}))
    return EXIT_OK


# -- buffer-inspect -----------------------------------------------------------

def cmd_buffer_inspect(args) -> int:
    try:
        buf = InstructionBuffer.load(args.snapshot)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read {args.snapshot}: {exc.strerror or exc}")
    except SnapshotError as exc:
        raise CliError(EXIT_SNAPSHOT, f"{args.snapshot}: {exc}")
    print("slot\tstatus\tmean_return\tseen_count\tsource\ttext")
    for i, e in enumerate(buf.slots):
        if e is None:
            continue
        st = buf.status_of(e)
        print(f"{i}\t{st} {STATUS_NAMES[st]}\t{e.mean_return:.4f}\t{e.seen_count}\t{e.source}\t{e.text}")
    hist = buf.histogram()
    print("# " + " ".join(f"{k}={v}" for k, v in hist.items()) + f" capacity={buf.capacity} cursor={buf.cursor}")
    if args.export:
        buf.export(args.export)
    return EXIT_OK


# -- embed-export -------------------------------------------------------------

def _instruction_texts(path: Path) -> list[str]:
    """Instruction strings from plain lines or JSONL records carrying ``text``."""
    out, seen = [], set()
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        text = line
        if line.startswith("{"):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                rec = None
            if isinstance(rec, dict):
                text = rec.get("text") or rec.get("instruction")
                if not isinstance(text, str):
                    continue
        text = " ".join(text.split())
        if text and text.casefold() not in seen:
            seen.add(text.casefold())
            out.append(text)
    return out


def cmd_embed_export(args) -> int:
    spec = EmbedderSpec()
    if args.config:
        try:
            spec = rc.load(args.config).embedder
        except rc.ConfigError as exc:
            raise CliError(EXIT_CONFIG, str(exc))
    try:
        texts = _instruction_texts(Path(args.instructions))
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read {args.instructions}: {exc.strerror or exc}")
    try:
        vecs = make_embedder(spec).embed_many(texts) if texts else np.zeros((0, spec.dimension))
    except EmbeddingError as exc:
        raise CliError(EXIT_NETWORK, str(exc))
    lines = ["instruction\t" + "\t".join(f"e{j}" for j in range(spec.dimension))]
    for t, v in zip(texts, vecs):
        lines.append(t.replace("\t", " ") + "\t" + "\t".join(repr(float(x)) for x in v))
    body = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(body, encoding="utf-8")
    else:
        sys.stdout.write(body)
    return EXIT_OK


# -- wiring -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oir", allow_abbrev=False, description="Train and evaluate instruction-relabeling agents.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", allow_abbrev=False, help="run training from a YAML config")
    t.add_argument("--config", help="YAML run config")
    t.add_argument("--run-dir", help="write artifacts here instead of a timestamped directory")
    t.add_argument("--resume", help="continue from a checkpoint.npz")
    t.add_argument("--stop-after", type=int, help="stop after this many iterations (a checkpoint is still written)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", allow_abbrev=False, help="evaluate a checkpoint on an instruction suite")
    e.add_argument("checkpoint")
    e.add_argument("--suite", default="original", choices=ek.SUITE_NAMES)
    e.add_argument("--suites-file", help="alternative suite TSV")
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--seed", type=int, default=10_000)
    e.add_argument("--out", help="report path (JSONL)")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("relabel", allow_abbrev=False, help="relabel recorded trajectories offline")
    r.add_argument("trajectories", help="trajectory JSONL file")
    r.add_argument("--mode", default="oracle", choices=rl.MODES)
    r.add_argument("-k", type=int, default=rl.DEFAULT_K)
    r.add_argument("--config", help="YAML run config supplying the llm section")
    r.add_argument("--endpoint", help="chat-completions URL")
    r.add_argument("--no-fallback", action="store_true", help="fail instead of falling back to rule candidates")
    r.set_defaults(func=cmd_relabel)

    b = sub.add_parser("buffer-inspect", allow_abbrev=False, help="tabulate an instruction buffer snapshot")
    b.add_argument("snapshot")
    b.add_argument("--export", help="re-export the loaded snapshot to this path")
    b.set_defaults(func=cmd_buffer_inspect)

    x = sub.add_parser("embed-export", allow_abbrev=False, help="write instruction embeddings as TSV")
    x.add_argument("instructions", help="one instruction per line, or JSONL with a 'text' field")
    x.add_argument("--out")
    x.add_argument("--config", help="YAML run config supplying the embedder section")
    x.set_defaults(func=cmd_embed_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    overrides = [a for a in extra if a.startswith("--") and "=" in a]
    stray = [a for a in extra if a not in overrides]
    if stray:
        parser.error(f"unrecognized arguments: {' '.join(stray)}")
    if overrides and args.command != "train":
        parser.error("key=value overrides are only accepted by train")
    args.overrides = [a[2:] for a in overrides]
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"oir {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
