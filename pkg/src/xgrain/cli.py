"""Command-line interface: ``xgrain <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.

Any subcommand accepts ``--config FILE``: a text file of ``key=value`` lines
(``#`` comments allowed) where each key is a long flag name without the
leading dashes, e.g. ``tau=0.1`` or ``json=true``. Flags given on the command
line override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .aggregation import DEFAULT_TAU, METHODS, AggregationConfig
from .errors import ParameterError, XGrainError
from .evaluation import DIRECTIONS, evaluate_both
from .objective import DEFAULT_SCALE, ContrastToggles
from .scoring import paired_tokens, similarity_matrix
from .store import Corpus, TokenSequence, read_corpus, read_pairs, write_corpus, write_pairs

DEFAULT_TAUS = (1.0, 0.1, 0.01, 0.001)


class UsageError(Exception):
    pass


# -- argument types -------------------------------------------------------------

def positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v > 0 or not np.isfinite(v):
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def nonneg_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def seed_type(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def toggles_type(text: str) -> ContrastToggles:
    try:
        return ContrastToggles.parse(text)
    except ParameterError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def tau_list(text: str) -> list[float]:
    return [positive_float(t) for t in text.split(",") if t.strip()]


# -- parser -----------------------------------------------------------------------

def _common(threads=True) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="FILE", help="key=value file of flag defaults")
    p.add_argument("--json", action="store_true", help="machine-readable JSON output")
    p.add_argument("--out", metavar="PATH", help="write output here instead of stdout")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    if threads:
        p.add_argument("--threads", type=positive_int, default=None,
                       help="worker threads for scoring (default: $XGRAIN_THREADS or 1)")
    return p


def _corpora(p: argparse.ArgumentParser, required=True) -> None:
    p.add_argument("--video-corpus", metavar="PATH", required=required, help="binary video corpus")
    p.add_argument("--text-corpus", metavar="PATH", required=required, help="binary text corpus")
    p.add_argument("--pairs", metavar="PATH",
                   help="pair list (video_id<TAB>text_id); default pairs items by position")
    p.add_argument("--params", metavar="PATH", help="trained model checkpoint to score with")
    p.add_argument("--chunk", type=positive_int, default=None,
                   help="stream the score grid this many videos at a time (bounds memory)")


def _scoring(p: argparse.ArgumentParser, agg=True) -> None:
    if agg:
        p.add_argument("--agg", choices=METHODS, default="attention", help="aggregation method")
    p.add_argument("--tau", type=positive_float, default=DEFAULT_TAU, help="softmax temperature")
    p.add_argument("--toggles", type=toggles_type, default=ContrastToggles(),
                   help="enabled contrasts, comma list from vs,vw,fs,fw (default: all)")
    p.add_argument("--scale", type=nonneg_float, default=DEFAULT_SCALE, help="logit scale")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xgrain", description="Multi-grained video-text similarity toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("ingest", parents=[_common(False)], help="validate or convert a corpus",
                       description="Validate a binary corpus, or convert an .npz (one array per id) into one.")
    p.add_argument("input", help="corpus file (.xgeb binary or .npz)")
    p.add_argument("--max-tokens", type=positive_int, help="maximum tokens per item")
    p.add_argument("--truncate", action="store_true",
                   help="drop tokens beyond --max-tokens instead of failing")
    p.add_argument("--corpus-out", metavar="PATH", help="write the (converted) binary corpus here")

    p = sub.add_parser("score", parents=[_common()], help="score paired corpora")
    _corpora(p)
    _scoring(p)
    p.add_argument("--matrix", action="store_true", help="include the full video x text matrix")

    p = sub.add_parser("eval", parents=[_common(False)], help="metrics from a score-matrix file")
    p.add_argument("scores", help="JSON file with a 'matrix' entry (as written by score --matrix)")
    p.add_argument("--direction", choices=DIRECTIONS + ("both",), default="both")

    p = sub.add_parser("ablate-agg", parents=[_common()], help="compare all aggregation methods")
    _corpora(p)
    _scoring(p, agg=False)

    p = sub.add_parser("sweep-tau", parents=[_common()], help="attention aggregation across temperatures")
    _corpora(p)
    p.add_argument("--taus", type=tau_list, default=list(DEFAULT_TAUS),
                   help="comma list of temperatures (default 1,0.1,0.01,0.001)")
    p.add_argument("--toggles", type=toggles_type, default=ContrastToggles())
    p.add_argument("--scale", type=nonneg_float, default=DEFAULT_SCALE)

    p = sub.add_parser("gen-synth", parents=[_common(False)], help="generate a planted-alignment dataset")
    p.add_argument("--num-pairs", type=positive_int, default=64)
    p.add_argument("--dim", type=positive_int, default=32)
    p.add_argument("--frames", type=positive_int, default=12, help="frames per video")
    p.add_argument("--words", type=positive_int, default=8, help="words per text")
    p.add_argument("--relevant-frac", type=positive_float, default=0.25)
    p.add_argument("--noise-sigma", type=nonneg_float, default=0.1)
    p.add_argument("--seed", type=seed_type, default=0)
    p.add_argument("--out-dir", metavar="DIR", required=True,
                   help="writes videos.xgeb, texts.xgeb, pairs.tsv, masks.json")

    p = sub.add_parser("train-toy", parents=[_common(False)], help="train on a planted or given dataset",
                       description="Train heads and temporal encoder; prints one JSON object per epoch.")
    _corpora(p, required=False)
    _scoring(p)
    p.add_argument("--val-video-corpus", metavar="PATH")
    p.add_argument("--val-text-corpus", metavar="PATH")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=positive_int, default=16)
    p.add_argument("--lr-encoder", type=nonneg_float, default=1e-3)
    p.add_argument("--lr-heads", type=nonneg_float, default=1e-2)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--heads", type=positive_int, default=2)
    p.add_argument("--train-scale", action="store_true", help="learn the logit scale (clamped to [1, 200])")
    p.add_argument("--no-encoder", action="store_true", help="identity temporal encoder")
    p.add_argument("--seed", type=seed_type, default=0)
    p.add_argument("--num-pairs", type=positive_int, default=64, help="synthetic training pairs")
    p.add_argument("--save", metavar="PATH", help="write the trained checkpoint here")

    p = sub.add_parser("gradcheck", parents=[_common(False)], help="finite-difference gradient check")
    p.add_argument("--seed", type=seed_type, default=0)
    p.add_argument("--instances", type=positive_int, default=10)
    p.add_argument("--batch", type=positive_int, default=4)
    p.add_argument("--frames", type=positive_int, default=3)
    p.add_argument("--words", type=positive_int, default=4)
    p.add_argument("--dim", type=positive_int, default=8)
    p.add_argument("--tolerance", type=positive_float, default=1e-4)
    p.add_argument("--corrupt-gradient", action="store_true",
                   help="negative control: perturb one analytic gradient entry")
    return parser


# -- config files -------------------------------------------------------------------

def _config_tokens(path: str, parser: argparse.ArgumentParser, command: str) -> list[str]:
    sub = parser._subparsers._group_actions[0].choices[command]
    options = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                options[opt[2:]] = action
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}")
    tokens = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in options or key == "config":
            raise UsageError(f"{path}:{lineno}: unknown or malformed setting {line!r}")
        action = options[key]
        if action.nargs == 0:
            if value.lower() in ("1", "true", "yes", "on"):
                tokens.append(f"--{key}")
            elif value.lower() not in ("0", "false", "no", "off"):
                raise UsageError(f"{path}:{lineno}: {key} expects true/false")
        else:
            tokens += [f"--{key}", value]
    return tokens


def parse_args(argv, parser=None):
    parser = parser or build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            extra = _config_tokens(args.config, parser, args.command)
        except UsageError as exc:
            parser._subparsers._group_actions[0].choices[args.command].error(str(exc))
        rest = list(argv)
        pos = rest.index(args.command)
        args = parser.parse_args(rest[: pos + 1] + extra + rest[pos + 1 :])
    if hasattr(args, "threads") and args.threads is None:
        env = os.environ.get("XGRAIN_THREADS")
        try:
            args.threads = positive_int(env) if env else 1
        except argparse.ArgumentTypeError as exc:
            parser.error(f"XGRAIN_THREADS: {exc}")
    return args


# -- output helpers -------------------------------------------------------------------

def _emit(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    else:
        print(text)


def _table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[c if isinstance(c, str) else f"{c:.1f}" for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for k, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _load_scoring_inputs(args):
    videos = read_corpus(args.video_corpus)
    texts = read_corpus(args.text_corpus)
    if videos.dim != texts.dim:
        raise XGrainError(f"video corpus dim {videos.dim} does not match text corpus dim {texts.dim}")
    pairs = read_pairs(args.pairs) if args.pairs else None
    frames, words = paired_tokens(videos, texts, pairs)
    if pairs is None:
        ids = list(zip(videos.ids, texts.ids))
    else:
        ids = list(pairs)
    model = None
    if getattr(args, "params", None):
        from .checkpoint import load_model

        model = load_model(args.params)
    return frames, words, ids, model


def _metrics_row(name, scores):
    m = evaluate_both(scores)
    return m, [name, m["t2v"].r1, m["t2v"].r5, m["t2v"].mnr, m["v2t"].r1, m["v2t"].r5, m["v2t"].mnr]


_METRIC_HEADER = ["t2v R@1", "t2v R@5", "t2v MnR", "v2t R@1", "v2t R@5", "v2t MnR"]


# -- subcommands --------------------------------------------------------------------

def cmd_ingest(args) -> int:
    path = Path(args.input)
    if path.suffix == ".npz":
        try:
            data = np.load(path, allow_pickle=False)
        except (OSError, ValueError) as exc:
            raise OSError(f"cannot read {path}: {exc}") from exc
        items = [TokenSequence(k, np.asarray(data[k], dtype=np.float64)) for k in data.files]
        if not items:
            raise XGrainError(f"{path} contains no arrays")
        corpus = Corpus(items[0].dim, tuple(items))
    else:
        corpus = read_corpus(path)
    if args.max_tokens:
        too_long = [it.id for it in corpus if it.count > args.max_tokens]
        if too_long and not args.truncate:
            raise XGrainError(f"{len(too_long)} item(s) exceed {args.max_tokens} tokens "
                              f"(first: {too_long[0]!r}); pass --truncate to cut them")
        corpus = Corpus(corpus.dim, tuple(TokenSequence(it.id, it.tokens[: args.max_tokens]) for it in corpus))
    counts = [it.count for it in corpus]
    zero_rows = sum(int(np.count_nonzero(np.linalg.norm(it.tokens, axis=1) == 0)) for it in corpus)
    summary = {"path": str(path), "items": len(corpus), "dim": corpus.dim,
               "min_tokens": min(counts), "max_tokens": max(counts), "zero_rows": zero_rows}
    if args.corpus_out:
        write_corpus(corpus, args.corpus_out)
        summary["written"] = args.corpus_out
    if args.json:
        _emit(args, json.dumps(summary))
    else:
        _emit(args, "\n".join(f"{k}: {v}" for k, v in summary.items()))
    return 0


def cmd_score(args) -> int:
    frames, words, ids, model = _load_scoring_inputs(args)
    cfg = AggregationConfig(args.agg, args.tau)
    sims = args.scale * similarity_matrix(frames, words, cfg, args.toggles, model=model,
                                         chunk=args.chunk, threads=args.threads)
    diag = np.diagonal(sims)
    if args.json or args.out:
        doc = {
            "agg": args.agg, "tau": args.tau, "toggles": str(args.toggles), "scale": args.scale,
            "pairs": [{"video_id": v, "text_id": t, "score": float(s)} for (v, t), s in zip(ids, diag)],
        }
        if args.matrix:
            doc["video_ids"] = [v for v, _ in ids]
            doc["text_ids"] = [t for _, t in ids]
            doc["matrix"] = sims.tolist()
        _emit(args, json.dumps(doc))
    else:
        lines = [f"{v}\t{t}\t{s:.6f}" for (v, t), s in zip(ids, diag)]
        if args.matrix:
            lines += ["\t".join(f"{x:.6f}" for x in row) for row in sims]
        _emit(args, "\n".join(lines))
    return 0


def cmd_eval(args) -> int:
    try:
        doc = json.loads(Path(args.scores).read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"cannot read {args.scores}: {exc.strerror}") from exc
    except ValueError as exc:
        raise XGrainError(f"{args.scores} is not valid JSON: {exc}") from exc
    matrix = doc["matrix"] if isinstance(doc, dict) and "matrix" in doc else doc
    try:
        scores = np.array(matrix, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise XGrainError(f"{args.scores} does not hold a numeric matrix") from exc
    results = evaluate_both(scores)
    directions = DIRECTIONS if args.direction == "both" else (args.direction,)
    if args.json:
        _emit(args, json.dumps([results[d].to_json() for d in directions]))
    else:
        rows = [[d, results[d].r1, results[d].r5, results[d].r10, results[d].mdr, results[d].mnr]
                for d in directions]
        _emit(args, _table(["direction", "R@1", "R@5", "R@10", "MdR", "MnR"], rows))
    return 0


def ablate_agg(frames, words, tau, toggles, model=None, chunk=None, threads=1):
    """Metrics for every aggregation method; returns {method: {direction: metrics}}."""
    out = {}
    for method in METHODS:
        s = similarity_matrix(frames, words, AggregationConfig(method, tau), toggles, model=model,
                              chunk=chunk, threads=threads)
        out[method] = evaluate_both(s)
    return out


def sweep_tau(frames, words, taus, toggles, model=None, chunk=None, threads=1):
    out = {}
    for tau in taus:
        s = similarity_matrix(frames, words, AggregationConfig("attention", tau), toggles, model=model,
                              chunk=chunk, threads=threads)
        out[tau] = evaluate_both(s)
    return out


def _metric_report(args, label, results: dict) -> None:
    if args.json:
        doc = [{label: key, **{d: m.to_json() for d, m in res.items()}} for key, res in results.items()]
        _emit(args, json.dumps(doc))
    else:
        rows = [[f"{key:g}" if isinstance(key, float) else str(key)] + [res[d].__getattribute__(a) for d in DIRECTIONS for a in ("r1", "r5", "mnr")]
                for key, res in results.items()]
        _emit(args, _table([label] + _METRIC_HEADER, rows))


def cmd_ablate_agg(args) -> int:
    frames, words, _, model = _load_scoring_inputs(args)
    _metric_report(args, "method", ablate_agg(frames, words, args.tau, args.toggles, model, args.chunk, args.threads))
    return 0


def cmd_sweep_tau(args) -> int:
    if not args.taus:
        raise UsageError("--taus needs at least one value")
    frames, words, _, model = _load_scoring_inputs(args)
    _metric_report(args, "tau", sweep_tau(frames, words, args.taus, args.toggles, model, args.chunk, args.threads))
    return 0


def cmd_gen_synth(args) -> int:
    from .synthetic import SynthConfig, generate, write_masks

    cfg = SynthConfig(args.num_pairs, args.dim, args.frames, args.words, args.relevant_frac,
                      args.noise_sigma, args.seed)
    if args.relevant_frac > 1:
        raise UsageError("--relevant-frac must be in (0, 1]")
    ds = generate(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_corpus(ds.videos, out / "videos.xgeb")
    write_corpus(ds.texts, out / "texts.xgeb")
    write_pairs(ds.pairs, out / "pairs.tsv")
    write_masks(ds.masks, out / "masks.json")
    summary = {"out_dir": str(out), "pairs": cfg.num_pairs, "dim": cfg.dim,
               "relevant_frames": cfg.relevant_frames, "relevant_words": cfg.relevant_words, "seed": cfg.seed}
    _emit(args, json.dumps(summary) if args.json else "\n".join(f"{k}: {v}" for k, v in summary.items()))
    return 0


def cmd_train_toy(args) -> int:
    from .synthetic import SynthConfig, generate
    from .training import train_toy

    if args.epochs < 0 or args.layers < 0:
        raise UsageError("--epochs and --layers must be >= 0")
    if args.video_corpus or args.text_corpus:
        if not (args.video_corpus and args.text_corpus):
            raise UsageError("--video-corpus and --text-corpus go together")
        frames, words, _, _ = _load_scoring_inputs(args)
    else:
        ds = generate(SynthConfig(num_pairs=args.num_pairs, seed=args.seed))
        frames, words = ds.frames, ds.words
    if args.val_video_corpus and args.val_text_corpus:
        vv, vt = read_corpus(args.val_video_corpus), read_corpus(args.val_text_corpus)
        val_frames, val_words = paired_tokens(vv, vt)
    elif args.video_corpus:
        val_frames, val_words = [], []
    else:
        val = generate(SynthConfig(num_pairs=args.num_pairs, seed=(args.seed + 1) % 2**64))
        val_frames, val_words = val.frames, val.words

    stream = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        result = train_toy(
            frames, words, val_frames, val_words, epochs=args.epochs, lr_encoder=args.lr_encoder,
            lr_heads=args.lr_heads, seed=args.seed, batch_size=args.batch_size,
            cfg=AggregationConfig(args.agg, args.tau), toggles=args.toggles, layers=args.layers,
            heads=args.heads, scale=args.scale, train_scale=args.train_scale,
            use_encoder=not args.no_encoder, log=stream,
        )
    finally:
        if args.out:
            stream.close()
    if args.save:
        from .checkpoint import save_model

        save_model(result.model, args.save)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    worst = run_suite(seed=args.seed, instances=args.instances, batch=args.batch, n=args.frames,
                      m=args.words, dim=args.dim, corrupt=args.corrupt_gradient)
    failed = [name for name, e in worst.items() if not e <= args.tolerance]
    if args.json:
        _emit(args, json.dumps({"max_relative_error": worst, "tolerance": args.tolerance,
                                "passed": not failed, "failed": failed}))
    else:
        lines = [f"{'FAIL' if name in failed else 'ok  '}  {e:.3e}  {name}" for name, e in worst.items()]
        lines.append(f"{'FAILED' if failed else 'passed'}: max relative error "
                     f"{max(worst.values()):.3e} (tolerance {args.tolerance:g})")
        _emit(args, "\n".join(lines))
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "score": cmd_score,
    "eval": cmd_eval,
    "ablate-agg": cmd_ablate_agg,
    "sweep-tau": cmd_sweep_tau,
    "gen-synth": cmd_gen_synth,
    "train-toy": cmd_train_toy,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parse_args(argv, parser)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.error(str(exc))
    except (XGrainError, OSError, ValueError, KeyError) as exc:
        print(f"xgrain {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
