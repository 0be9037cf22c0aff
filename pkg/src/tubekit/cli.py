"""Command-line front end: ``tubekit <stage> ...``.

Stages: synth, filter, train, score, link, classify, eval, plus ``replay``
to re-run a stage from the manifest it wrote. Failures print one JSON line
to stderr with the stage, file and reason.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from tubekit import __version__
from tubekit import pipeline
from tubekit.classifier import TrainConfig
from tubekit.corpus_io import atomic_write_text, load_corpus
from tubekit.errors import InvalidInputError, LoadError, StageError, TubekitError
from tubekit.linker import LinkConfig
from tubekit.synth import SynthConfig, generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

STAGES = ("synth", "filter", "train", "score", "link", "classify", "eval")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sigmas(text: str):
    try:
        values = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("at least one sigma is required")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tubekit", description="Action tube detection pipeline")
    parser.add_argument("--version", action="version", version=f"tubekit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("corpus", help="output corpus root")
    d = SynthConfig()
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--num-videos", type=int, default=d.num_videos)
    p.add_argument("--frames", type=int, default=d.frames_per_video)
    p.add_argument("--num-actions", type=int, default=d.num_actions)
    p.add_argument("--proposals", type=int, default=d.proposals_per_frame)
    p.add_argument("--dim-s", type=int, default=d.feature_dim_s)
    p.add_argument("--dim-m", type=int, default=d.feature_dim_m)
    p.add_argument("--separation", type=float, default=d.class_separation)
    p.add_argument("--actor-flow", type=float, default=d.actor_flow)
    p.add_argument("--background-flow", type=float, default=d.background_flow)
    p.add_argument("--jitter", type=float, default=d.jitter)
    p.add_argument("--width", type=int, default=d.width)
    p.add_argument("--height", type=int, default=d.height)

    def stage(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("corpus", help="corpus root")
        sp.add_argument("--work", default=None, help="directory for stage outputs (default: <corpus>/work)")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    p = stage("filter", "motion-saliency filtering of proposals")
    p.add_argument("--alpha", type=float, default=0.3)

    p = stage("train", "train one linear SVM per action")
    t = TrainConfig()
    p.add_argument("--neg-overlap", type=float, default=t.neg_overlap)
    p.add_argument("--C", dest="C", type=float, default=t.C)
    p.add_argument("--hnm-rounds", type=int, default=t.hnm_rounds)
    p.add_argument("--initial-neg-per-pos", type=int, default=t.initial_neg_per_pos)
    p.add_argument("--max-epochs", type=int, default=t.max_epochs)
    p.add_argument("--tol", type=float, default=t.tol)

    stage("score", "score every proposal under every action model")

    p = stage("link", "link scored regions into action tubes")
    p.add_argument("--lambda", dest="lam", type=float, default=LinkConfig().lam)
    p.add_argument("--max-tubes", type=int, default=LinkConfig().max_tubes)

    stage("classify", "label each video by its best tube")

    p = stage("eval", "frame-AP, video-AP, AUC and classification accuracy")
    p.add_argument("--sigma", type=_sigmas, default=[0.5], help="comma-separated overlap thresholds")
    p.add_argument("--topk", type=int, default=3)
    p.add_argument("--fpr-max", type=float, default=0.6)
    p.add_argument("--frame-nms", type=float, default=0.3, help="per-frame NMS IoU for frame-AP (>= 1 disables)")
    p.add_argument("--curves", default=None, help="directory for PR/ROC point dumps")

    p = sub.add_parser("replay", help="re-run a stage from its manifest")
    p.add_argument("manifest")
    return parser


def _work_dir(args) -> Path:
    return Path(args.work).resolve() if args.work else Path(args.corpus).resolve() / "work"


def _manifest(args, flags: dict) -> dict:
    return {
        "tool": "tubekit",
        "version": __version__,
        "subcommand": args.command,
        "corpus": str(Path(args.corpus).resolve()),
        "seed": args.seed,
        "flags": flags,
    }


def _flags(args, parser_for_command) -> dict:
    skip = {"command", "verbose", "corpus"}
    flags = {}
    for action in parser_for_command._actions:
        if action.dest in skip or action.dest == "help" or not hasattr(args, action.dest):
            continue
        value = getattr(args, action.dest)
        if action.dest == "work":
            value = str(_work_dir(args))
        elif action.dest == "curves" and value is not None:
            value = str(Path(value).resolve())
        flags[action.dest] = value
    return flags


def _write_manifest(path: Path, manifest: dict) -> None:
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run(args, parser) -> None:
    command = args.command
    sub = _subparser(parser, command)
    flags = _flags(args, sub)
    manifest = _manifest(args, flags)

    if command == "synth":
        cfg = _config(
            SynthConfig,
            num_videos=args.num_videos, frames_per_video=args.frames, num_actions=args.num_actions,
            proposals_per_frame=args.proposals, feature_dim_s=args.dim_s, feature_dim_m=args.dim_m,
            class_separation=args.separation, actor_flow=args.actor_flow, background_flow=args.background_flow,
            jitter=args.jitter, seed=args.seed, width=args.width, height=args.height,
        )
        root = Path(args.corpus)
        generate(cfg, root)
        _write_manifest(root / "manifest_synth.json", manifest)
        return

    if command == "filter" and not 0.0 <= args.alpha <= 1.0:
        raise UsageError(f"--alpha must lie in [0, 1], got {args.alpha}")
    if command == "eval":
        if any(not 0.0 < s <= 1.0 for s in args.sigma):
            raise UsageError(f"--sigma values must lie in (0, 1], got {args.sigma}")
        if args.topk < 1 or not 0.0 < args.fpr_max <= 1.0:
            raise UsageError("--topk must be >= 1 and --fpr-max in (0, 1]")
    corpus = load_corpus(args.corpus)
    work = _work_dir(args)
    if command == "filter":
        report = pipeline.run_filter(corpus, work, args.alpha)
        print(f"retained {report.retained_count} of {report.total_count} proposals "
              f"(discard fraction {report.discard_fraction:.4f})")
    elif command == "train":
        cfg = _config(TrainConfig, args.neg_overlap, args.C, args.hnm_rounds, args.initial_neg_per_pos,
                      args.seed, args.max_epochs, args.tol)
        pipeline.run_train(corpus, work, cfg)
    elif command == "score":
        pipeline.run_score(corpus, work)
    elif command == "link":
        pipeline.run_link(corpus, work, _config(LinkConfig, args.lam, args.max_tubes))
    elif command == "classify":
        pipeline.run_classify(corpus, work)
    elif command == "eval":
        out = pipeline.run_eval(corpus, work, args.sigma, args.topk, args.fpr_max, args.frame_nms, args.curves)
        for row in out.rows:
            if row.cls in ("mean", "all"):
                print(f"{row.metric}\t{row.cls}\t{row.sigma}\t{row.value:.4f}")
    _write_manifest(work / f"manifest_{command}.json", manifest)


def _config(cls, *args, **kwargs):
    """Build a config object, reporting invalid flag values as usage errors."""
    try:
        return cls(*args, **kwargs)
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def manifest_argv(manifest: dict, parser=None) -> list:
    """Reconstruct the command line recorded in a manifest."""
    parser = parser or build_parser()
    command = manifest["subcommand"]
    if command not in STAGES:
        raise UsageError(f"manifest names unknown subcommand {command!r}")
    sub = _subparser(parser, command)
    flags = dict(manifest["flags"])
    argv = [command, manifest["corpus"]]
    for action in sub._actions:
        if action.dest not in flags or not action.option_strings:
            continue
        value = flags[action.dest]
        if value is None:
            continue
        if isinstance(value, list):
            value = ",".join(repr(float(v)) for v in value)
        argv += [action.option_strings[0], str(value)]
    return argv


def _error(stage, file, reason, requires=None) -> str:
    payload = {"stage": stage, "file": file, "reason": reason}
    if requires:
        payload["requires"] = requires
    return json.dumps(payload, sort_keys=True)


def main(argv=None) -> int:
    parser = build_parser()
    stage = "cli"
    try:
        args = parser.parse_args(argv)
        if args.command == "replay":
            stage = "replay"
            try:
                manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise LoadError(args.manifest, f"cannot read manifest: {exc}") from None
            args = parser.parse_args(manifest_argv(manifest, parser))
        stage = args.command
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        run(args, parser)
        return EXIT_OK
    except UsageError as exc:
        print(_error(stage, None, str(exc)), file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(_error(exc.stage, exc.file, exc.reason, exc.requires), file=sys.stderr)
        return EXIT_DATA
    except LoadError as exc:
        print(_error(stage, exc.path, str(exc)), file=sys.stderr)
        return EXIT_DATA
    except TubekitError as exc:
        print(_error(stage, None, f"{type(exc).__name__}: {exc}"), file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(_error(stage, exc.filename, str(exc)), file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        logging.getLogger(__name__).debug(traceback.format_exc())
        print(_error(stage, None, f"internal error: {type(exc).__name__}: {exc}"), file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
