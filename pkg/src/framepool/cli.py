"""Command-line interface.

Commands: train, eval, rank, augment-sweep, khist, frames-sweep,
export-attn, gradcheck, validate-embeddings. Flags override a line-oriented
`key = value` config file, which overrides built-in defaults. All output
files are written to a temp file and renamed on success; timestamps appear
only in the `# generated ...` header of summary files, so outputs are
otherwise byte-for-byte deterministic given the same seed.

Exit codes: 0 success, 1 usage/parameter error, 2 data/format error,
3 numeric error.
"""

import argparse
import datetime
import json
import os
import sys

from .corpus import (
    AugmentationSpec,
    atomic_write,
    inject_transitions,
    load_checkpoint,
    load_corpus,
    read_embeddings,
    save_checkpoint,
)
from .errors import DataError, NumericError, ParameterError, StateError
from .gradcheck import run_grad_check
from .pooling import attention_pool_fwd
from .retrieval import (
    AttentionPoolMethod,
    TwoStageConfig,
    evaluate,
    evaluate_two_stage,
    make_method,
    optimal_k_histogram,
    rank_t2v,
    rank_v2t,
)
from .seeding import derive_seed
from .trainer import TrainConfig, train
from .validation import check_finite, check_nonzero_rows


def parse_config_file(path):
    """Line-oriented `key = value` pairs; blanks and '#' comments ignored."""
    values = {}
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


class Settings:
    """Flag > config file > default resolution for one parsed command."""

    def __init__(self, args):
        self.args = args
        config_path = getattr(args, "config", None)
        self.file = parse_config_file(config_path) if config_path else {}

    def get(self, key, default, cast=str):
        value = getattr(self.args, key, None)
        if value is not None:
            return value
        if key in self.file:
            raw = self.file[key]
            if cast is bool:
                return raw.lower() in ("1", "true", "yes")
            return cast(raw)
        return default


def _now_header():
    stamp = datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    return f"# generated {stamp}"


def write_jsonl(path, records):
    with atomic_write(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def write_summary(path, lines):
    with atomic_write(path, "w") as fh:
        fh.write(_now_header() + "\n")
        for line in lines:
            fh.write(line + "\n")


def _load_corpus(settings):
    texts = settings.get("texts", None)
    videos = settings.get("videos", None)
    manifest = settings.get("manifest", None)
    for name, value in (("texts", texts), ("videos", videos), ("manifest", manifest)):
        if value is None:
            raise ParameterError(f"--{name} is required")
    return load_corpus(texts, videos, manifest)


def _parse_frames(value):
    if value is None or value == "all":
        return None
    try:
        n = int(value)
    except ValueError:
        raise ParameterError(f"--frames expects an integer or 'all', got '{value}'") from None
    if n < 1:
        raise ParameterError("--frames must be >= 1")
    return n


def _resolve_method(settings, corpus):
    selector = settings.get("method", "mean")
    head = None
    if selector in ("attention", "attn"):
        ckpt = settings.get("checkpoint", None)
        if ckpt is None:
            raise ParameterError("attention pooling requires --checkpoint")
        head, _ = load_checkpoint(ckpt)
    method = make_method(selector, head)
    if selector.startswith("topk:"):
        min_f = min(m.shape[0] for m in corpus.videos.values())
        if method.k > min_f:
            raise ParameterError(
                f"top-k k={method.k} exceeds the smallest frame count {min_f}")
    return method


def _report_files(outdir, report, tag):
    os.makedirs(outdir, exist_ok=True)
    safe = tag.replace(":", "")
    jsonl = os.path.join(outdir, f"eval_{safe}.jsonl")
    txt = os.path.join(outdir, f"eval_{safe}.txt")
    write_jsonl(jsonl, report.to_records())
    write_summary(txt, [report.summary()])
    return jsonl, txt


def cmd_train(args):
    settings = Settings(args)
    corpus = _load_corpus(settings)
    outdir = settings.get("out", "out")
    os.makedirs(outdir, exist_ok=True)
    config = TrainConfig(
        batch_size=settings.get("batch_size", 32, int),
        epochs=settings.get("epochs", 5, int),
        lr_head=settings.get("lr", 1e-5, float),
        weight_decay=settings.get("weight_decay", 0.2, float),
        dropout_rate=settings.get("dropout", 0.3, float),
        seed=settings.get("seed", 0, int),
        frames_per_video=settings.get("frames_train", 12, int),
        checkpoint_every=settings.get("checkpoint_every", 0, int),
        initial_logit_scale=settings.get("logit_scale", 100.0, float),
        validate_every=settings.get("validate_every", 1, int),
    )

    def on_checkpoint(step, head, scale):
        save_checkpoint(head, scale, os.path.join(outdir, f"checkpoint_step{step}.xpc"))

    result = train(corpus, config, on_checkpoint=on_checkpoint)
    save_checkpoint(result.head, result.scale, os.path.join(outdir, "checkpoint.xpc"))
    write_jsonl(os.path.join(outdir, "train_log.jsonl"), result.log)

    report = evaluate(AttentionPoolMethod(result.head), corpus, "t2v",
                      threads=settings.get("threads", 1, int))
    _report_files(outdir, report, "t2v_attention")
    lines = [f"epochs={config.epochs} steps={len(result.log)} "
             f"best_epoch={result.best_epoch} best_t2v_r1={result.best_r1:.4f}",
             report.summary()]
    write_summary(os.path.join(outdir, "train_summary.txt"), lines)
    print(lines[0])
    print(report.summary())
    return 0


def cmd_eval(args):
    settings = Settings(args)
    corpus = _load_corpus(settings)
    frames = _parse_frames(settings.get("frames", None))
    corpus = corpus.subsampled(frames)
    direction = settings.get("direction", "t2v")
    threads = settings.get("threads", 1, int)
    outdir = settings.get("out", "out")
    two_stage = settings.get("two_stage", None)

    if two_stage is not None:
        if direction != "t2v":
            raise ParameterError("--two-stage applies to t2v only")
        ckpt = settings.get("checkpoint", None)
        if ckpt is None:
            raise ParameterError("--two-stage requires --checkpoint")
        head, _ = load_checkpoint(ckpt)
        cfg = TwoStageConfig(candidate_count=int(two_stage))
        report = evaluate_two_stage(head, corpus, cfg, threads=threads)
        tag = f"t2v_two_stage_p{cfg.candidate_count}"
    else:
        method = _resolve_method(settings, corpus)
        report = evaluate(method, corpus, direction, threads=threads)
        tag = f"{direction}_{method.name}"
    _report_files(outdir, report, tag)
    print(report.summary())
    return 0


def cmd_rank(args):
    settings = Settings(args)
    corpus = _load_corpus(settings)
    corpus = corpus.subsampled(_parse_frames(settings.get("frames", None)))
    method = _resolve_method(settings, corpus)
    direction = settings.get("direction", "t2v")
    query_id = settings.get("query_id", None)
    if query_id is None:
        raise ParameterError("--query-id is required")
    top = settings.get("top", 10, int)
    if direction == "t2v":
        if query_id not in corpus.texts:
            raise DataError(f"unknown text id '{query_id}'")
        ordering = rank_t2v(method, corpus.texts[query_id], corpus.videos)
    elif direction == "v2t":
        if query_id not in corpus.videos:
            raise DataError(f"unknown video id '{query_id}'")
        ordering = rank_v2t(method, corpus.videos[query_id], corpus.texts)
    else:
        raise ParameterError(f"direction must be t2v or v2t, got '{direction}'")
    outdir = settings.get("out", "out")
    os.makedirs(outdir, exist_ok=True)
    records = [{"query_id": query_id, "item_id": item_id, "rank": pos, "score": score}
               for pos, (item_id, score) in enumerate(ordering[:top], 1)]
    write_jsonl(os.path.join(outdir, f"rank_{query_id}.jsonl"), records)
    for record in records:
        print(f"{record['rank']:4d} {record['item_id']} {record['score']:.6f}")
    return 0


def cmd_augment_sweep(args):
    settings = Settings(args)
    corpus = _load_corpus(settings)
    ckpt = settings.get("checkpoint", None)
    if ckpt is None:
        raise ParameterError("augment-sweep requires --checkpoint")
    head, _ = load_checkpoint(ckpt)
    seed = settings.get("seed", 0, int)
    max_transitions = settings.get("max_transitions", 4, int)
    threads = settings.get("threads", 1, int)
    outdir = settings.get("out", "out")
    os.makedirs(outdir, exist_ok=True)

    records = []
    lines = []
    for t in range(max_transitions + 1):
        spec = AugmentationSpec(
            num_transitions=t,
            donor_selection_seed=derive_seed(seed, "augment-donor", t),
            insertion_seed=derive_seed(seed, "augment-insert", t),
        )
        augmented = inject_transitions(corpus, spec)
        for method in (make_method("mean"), AttentionPoolMethod(head)):
            report = evaluate(method, augmented, "t2v", threads=threads)
            r = report.recall_at
            records.append({"transitions": t, "method": method.name,
                            "r1": r[1], "r5": r[5], "r10": r[10],
                            "mdr": report.median_rank, "mnr": report.mean_rank})
            lines.append(f"transitions={t} {report.summary()}")
    write_jsonl(os.path.join(outdir, "augment_sweep.jsonl"), records)
    write_summary(os.path.join(outdir, "augment_sweep.txt"), lines)
    for line in lines:
        print(line)
    return 0


def cmd_khist(args):
    settings = Settings(args)
    corpus = _load_corpus(settings)
    corpus = corpus.subsampled(_parse_frames(settings.get("frames", None)))
    histogram = optimal_k_histogram(corpus)
    outdir = settings.get("out", "out")
    os.makedirs(outdir, exist_ok=True)
    records = [{"k": k, "count": c} for k, c in histogram.items()]
    write_jsonl(os.path.join(outdir, "khist.jsonl"), records)
    lines = [f"k={k} count={c}" for k, c in histogram.items()]
    write_summary(os.path.join(outdir, "khist.txt"), lines)
    for line in lines:
        print(line)
    return 0


def cmd_frames_sweep(args):
    settings = Settings(args)
    corpus = _load_corpus(settings)
    counts = settings.get("frame_counts", "6,12,24,all")
    methods = settings.get("methods", "mean,attention")
    threads = settings.get("threads", 1, int)
    outdir = settings.get("out", "out")
    os.makedirs(outdir, exist_ok=True)

    head = None
    method_list = []
    for selector in methods.split(","):
        selector = selector.strip()
        if selector in ("attention", "attn"):
            ckpt = settings.get("checkpoint", None)
            if ckpt is None:
                raise ParameterError("attention pooling requires --checkpoint")
            if head is None:
                head, _ = load_checkpoint(ckpt)
            method_list.append(AttentionPoolMethod(head))
        else:
            method_list.append(make_method(selector))

    records = []
    lines = []
    for token in counts.split(","):
        token = token.strip()
        frames = _parse_frames(token)
        view = corpus.subsampled(frames)
        for method in method_list:
            report = evaluate(method, view, "t2v", threads=threads)
            r = report.recall_at
            records.append({"frames": token, "method": method.name,
                            "r1": r[1], "r5": r[5], "r10": r[10],
                            "mdr": report.median_rank, "mnr": report.mean_rank})
            lines.append(f"frames={token} {report.summary()}")
    write_jsonl(os.path.join(outdir, "frames_sweep.jsonl"), records)
    write_summary(os.path.join(outdir, "frames_sweep.txt"), lines)
    for line in lines:
        print(line)
    return 0


def cmd_export_attn(args):
    settings = Settings(args)
    corpus = _load_corpus(settings)
    corpus = corpus.subsampled(_parse_frames(settings.get("frames", None)))
    ckpt = settings.get("checkpoint", None)
    if ckpt is None:
        raise ParameterError("export-attn requires --checkpoint")
    head, _ = load_checkpoint(ckpt)
    pairs_arg = settings.get("pairs", None)
    if pairs_arg:
        chosen = []
        for token in pairs_arg.split(","):
            if ":" not in token:
                raise ParameterError(f"--pairs entries are text_id:video_id, got '{token}'")
            tid, vid = token.split(":", 1)
            if tid not in corpus.texts:
                raise DataError(f"unknown text id '{tid}'")
            if vid not in corpus.videos:
                raise DataError(f"unknown video id '{vid}'")
            chosen.append((tid, vid))
    else:
        chosen = list(corpus.pairs)
    outdir = settings.get("out", "out")
    os.makedirs(outdir, exist_ok=True)
    records = []
    for tid, vid in chosen:
        _, trace = attention_pool_fwd(head, corpus.videos[vid], corpus.texts[tid],
                                      training=False)
        for frame_index, weight in zip(trace.frame_ids, trace.weights):
            records.append({"query_id": tid, "video_id": vid,
                            "frame_index": int(frame_index), "weight": float(weight)})
    write_jsonl(os.path.join(outdir, "attention_weights.jsonl"), records)
    print(f"wrote {len(records)} attention records for {len(chosen)} pair(s)")
    return 0


def cmd_gradcheck(args):
    settings = Settings(args)
    target = settings.get("target", "full")
    kwargs = {}
    if target == "full":
        kwargs = {
            "d": settings.get("dim", 8, int),
            "d_p": settings.get("proj_dim", 8, int),
            "f": settings.get("frames_count", 5, int),
            "b": settings.get("batch_size", 4, int),
            "tolerance": settings.get("tolerance", 1e-4, float),
            "seed": settings.get("seed", 0, int),
        }
    report = run_grad_check(target, **kwargs)
    for line in report.lines():
        print(line)
    return 0 if report.passed else 3


def cmd_validate_embeddings(args):
    records, d = read_embeddings(args.path)
    frame_counts = []
    for rec_id, mat in records.items():
        check_finite(mat, f"record '{rec_id}'")
        check_nonzero_rows(mat, f"record '{rec_id}'")
        frame_counts.append(mat.shape[0])
    lines = [f"file: {args.path}", f"records: {len(records)}", f"dimension: {d}"]
    if frame_counts:
        lines.append(f"frames: min={min(frame_counts)} max={max(frame_counts)} "
                     f"total={sum(frame_counts)}")
    for line in lines:
        print(line)
    print("OK")
    return 0


def _add_corpus_flags(sub):
    sub.add_argument("--texts", help="XPE1 file of caption embeddings")
    sub.add_argument("--videos", help="XPE1 file of per-video frame embeddings")
    sub.add_argument("--manifest", help="pair manifest file")
    sub.add_argument("--config", help="key = value config file (flags win)")
    sub.add_argument("--out", help="output directory (default: out)")
    sub.add_argument("--seed", type=int, help="root seed for all sub-streams")
    sub.add_argument("--threads", type=int, help="worker threads for evaluation")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="framepool",
        description="Text-video retrieval over precomputed frame embeddings.")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train", help="train the attention pooling head")
    _add_corpus_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--dropout", type=float)
    p.add_argument("--frames-train", type=int, dest="frames_train",
                   help="frames per video during training (0 = all)")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--logit-scale", type=float, dest="logit_scale",
                   help="initial similarity logit scale (default 100)")
    p.add_argument("--validate-every", type=int, dest="validate_every",
                   help="epochs between validation passes (default 1)")
    p.set_defaults(func=cmd_train)

    p = commands.add_parser("eval", help="evaluate a pooling method")
    _add_corpus_flags(p)
    p.add_argument("--method", help="mean | topk:K | attention")
    p.add_argument("--checkpoint")
    p.add_argument("--direction", choices=["t2v", "v2t"])
    p.add_argument("--frames", help="subsample each video to N frames, or 'all'")
    p.add_argument("--two-stage", dest="two_stage", type=int,
                   help="candidate count P for two-stage inference")
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("rank", help="rank the index for one query")
    _add_corpus_flags(p)
    p.add_argument("--method")
    p.add_argument("--checkpoint")
    p.add_argument("--direction", choices=["t2v", "v2t"])
    p.add_argument("--query-id", dest="query_id")
    p.add_argument("--frames")
    p.add_argument("--top", type=int)
    p.set_defaults(func=cmd_rank)

    p = commands.add_parser("augment-sweep",
                            help="scene-transition robustness sweep (mean vs attention)")
    _add_corpus_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--max-transitions", type=int, dest="max_transitions")
    p.set_defaults(func=cmd_augment_sweep)

    p = commands.add_parser("khist", help="optimal-k histogram over ground-truth pairs")
    _add_corpus_flags(p)
    p.add_argument("--frames")
    p.set_defaults(func=cmd_khist)

    p = commands.add_parser("frames-sweep", help="evaluate at several frame counts")
    _add_corpus_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--frame-counts", dest="frame_counts",
                   help="comma list, e.g. 6,12,24,all")
    p.add_argument("--methods", help="comma list of pooling selectors")
    p.set_defaults(func=cmd_frames_sweep)

    p = commands.add_parser("export-attn", help="export per-frame attention weights")
    _add_corpus_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--pairs", help="comma list of text_id:video_id (default: all pairs)")
    p.add_argument("--frames")
    p.set_defaults(func=cmd_export_attn)

    p = commands.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config")
    p.add_argument("--target", choices=["full", "linear", "layer_norm", "softmax", "dropout"])
    p.add_argument("--dim", type=int)
    p.add_argument("--proj-dim", type=int, dest="proj_dim")
    p.add_argument("--frames-count", type=int, dest="frames_count")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gradcheck)

    p = commands.add_parser("validate-embeddings", help="check an XPE1 file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate_embeddings)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except (ParameterError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entrypoint():
    sys.exit(main(sys.argv[1:]))
