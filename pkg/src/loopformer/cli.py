"""Command-line interface.

Subcommands::

    synth            generate a balanced keyword-separable dataset file
    preprocess       clean a dataset file (symbols, stopwords, links)
    train            fine-tune a model, writing a checkpoint + metrics
    eval             accuracy / compute-ratio of a checkpoint on a dataset
    sweep            threshold sweep -> sweep.csv (+ tradeoff figure)
    schedule-sim     execution-strategy comparison -> CSV reports (+ figures)
    trace-attention  cumulative start-position attention -> CSV (+ heatmap)

Report commands write delimited output and, unless ``--no-figures`` is
given, a rendered PNG alongside each CSV.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

from . import data as datamod
from . import experiments, scheduler
from .exit_policy import CRITERIA, ExitPolicy
from .model import ModelConfig, Parameters
from .scheduler import STRATEGIES, CostModel
from .training import TrainConfig, TrainingDiverged, train
from .weights_io import Checkpoint, load_checkpoint, save_checkpoint

_MODEL_KEYS = ("depth", "hidden", "heads", "ffn", "vocab", "seq_len", "classes")
_TRAIN_KEYS = ("learning_rate", "batch_size", "epochs", "beta1", "beta2", "eps", "seed")


def _add_policy_flags(p: argparse.ArgumentParser, with_delta: bool = True) -> None:
    if with_delta:
        p.add_argument("--delta", type=float, default=None, help="stage-1 puzzlement threshold; omit for full depth")
    p.add_argument(
        "--window",
        default="inf",
        help="stage-2 window size (integer >= 2, or 'inf' to disable stage 2; default inf)",
    )
    p.add_argument("--criterion", choices=CRITERIA, default="bias-trend", help="stage-2 trend criterion")
    p.add_argument("--range-eps", type=float, default=0.05, help="spread bound for the 'range' criterion")


def _parse_window(raw) -> float:
    if isinstance(raw, (int, float)):
        return float(raw)
    if raw.strip().lower() in ("inf", "infinity", "none"):
        return math.inf
    return float(int(raw))


def _policy_from_args(args, delta: float | None = None) -> ExitPolicy | None:
    delta = args.delta if delta is None else delta
    if delta is None:
        return None
    return ExitPolicy(
        delta=delta,
        window=_parse_window(args.window),
        criterion=args.criterion,
        range_eps=args.range_eps,
    )


def _load_model(path) -> Checkpoint:
    ck = load_checkpoint(path)
    if ck.vocab_tokens is None:
        raise ValueError(f"{path}: checkpoint carries no vocabulary; re-train with this tool")
    return ck


def _load_encoded(ck: Checkpoint, path, limit: int | None):
    records = datamod.load_dataset(path, classes=ck.params.config.classes)
    if limit is not None:
        records = records[:limit]
    if not records:
        raise ValueError(f"{path}: dataset is empty")
    vocab = datamod.Vocab(ck.vocab_tokens)
    return datamod.encode_dataset(records, vocab, ck.params.config.seq_len)


def _read_config_file(path) -> dict:
    values: dict[str, float] = {}
    allowed = set(_MODEL_KEYS) | set(_TRAIN_KEYS) | {"stop_accuracy"}
    for lineno, line in enumerate(open(path, encoding="utf-8"), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not value:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        if key not in allowed:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = float(value)
    return values


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_synth(args) -> int:
    records = datamod.synth_dataset(seed=args.seed, n=args.n, classes=args.classes)
    datamod.save_dataset(args.out, records)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def _cmd_preprocess(args) -> int:
    records = datamod.load_dataset(args.input, classes=args.classes)
    stopwords = datamod.DEFAULT_STOPWORDS
    if args.stopwords:
        stopwords = frozenset(Path(args.stopwords).read_text(encoding="utf-8").split())
    kept, dropped = datamod.preprocess_dataset(records, stopwords)
    datamod.save_dataset(args.out, kept)
    print(f"wrote {len(kept)} records to {args.out} ({dropped} dropped as empty)")
    return 0


def _cmd_train(args) -> int:
    file_cfg = _read_config_file(args.config) if args.config else {}

    def resolved(key, flag_value, cast):
        if flag_value is not None:
            return cast(flag_value)
        if key in file_cfg:
            return cast(file_cfg[key])
        return None

    model_kwargs = {}
    for key in _MODEL_KEYS:
        value = resolved(key, getattr(args, key), int)
        if value is not None:
            model_kwargs[key] = value
    config = ModelConfig(**model_kwargs)

    train_kwargs = {}
    for key, cast in (
        ("learning_rate", float),
        ("batch_size", int),
        ("epochs", int),
        ("beta1", float),
        ("beta2", float),
        ("eps", float),
        ("seed", int),
    ):
        value = resolved(key, getattr(args, key), cast)
        if value is not None:
            train_kwargs[key] = value
    train_cfg = TrainConfig(**train_kwargs)
    stop = resolved("stop_accuracy", args.stop_accuracy, float)

    records = datamod.load_dataset(args.data, classes=config.classes)
    if args.val:
        train_recs = records
        val_recs = datamod.load_dataset(args.val, classes=config.classes)
    else:
        train_recs, val_recs, _ = datamod.split_dataset(records, seed=train_cfg.seed)
    vocab = datamod.Vocab.build((r.text for r in train_recs), max_size=config.vocab)

    def encode(recs):
        seqs, labels = datamod.encode_dataset(recs, vocab, config.seq_len)
        return list(zip(seqs, labels))

    params = Parameters.initialize(config, seed=train_cfg.seed)
    trained, metrics, opt_state = train(
        params,
        encode(train_recs),
        encode(val_recs),
        train_cfg,
        early_stop_accuracy=stop,
        on_epoch=lambda m: print(
            f"epoch {m.epoch}: train loss {m.train_loss:.4f}  val accuracy {m.val_accuracy:.4f}  ({m.seconds:.1f}s)"
        ),
    )
    save_checkpoint(args.out, trained, vocab.tokens, opt_state)

    metrics_path = Path(str(args.out) + ".metrics.csv")
    with open(metrics_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("epoch", "train_loss", "val_accuracy", "seconds"))
        for m in metrics:
            writer.writerow((m.epoch, repr(m.train_loss), repr(m.val_accuracy), repr(m.seconds)))
    print(f"checkpoint: {args.out}")
    print(f"metrics: {metrics_path}")
    if not args.no_figures:
        from . import plots

        fig_path = Path(str(args.out) + ".training.png")
        plots.save_training_curves(fig_path, metrics)
        print(f"figure: {fig_path}")
    return 0


def _cmd_eval(args) -> int:
    ck = _load_model(args.model)
    seqs, labels = _load_encoded(ck, args.data, args.limit)
    policy = _policy_from_args(args)
    if args.depth_override is not None:
        if policy is not None:
            raise ValueError("--depth-override is a plain-compression baseline; drop the policy flags")
        row = experiments.evaluate(seqs, labels, ck.params, None, depth=args.depth_override)
    else:
        row = experiments.evaluate(seqs, labels, ck.params, policy, n_slots=args.batch_slots)
    print(f"samples: {len(seqs)}")
    print(f"accuracy: {row.accuracy:.6f}")
    print(f"compute_ratio: {row.compute_ratio:.6f}")
    print(f"mean_exit_layer: {row.mean_exit_layer:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    ck = _load_model(args.model)
    seqs, labels = _load_encoded(ck, args.data, args.limit)
    grid = [float(x) for x in args.deltas.split(",")] if args.deltas else experiments.default_delta_grid()
    base = ExitPolicy(
        delta=grid[0],
        window=_parse_window(args.window),
        criterion=args.criterion,
        range_eps=args.range_eps,
    )
    rows = experiments.sweep_delta(seqs, labels, ck.params, grid, base, n_slots=args.batch_slots)
    out = _out_dir(args)
    csv_path = out / "sweep.csv"
    experiments.write_sweep_csv(csv_path, rows)
    print(f"sweep table: {csv_path}")
    if not args.no_figures:
        from . import plots

        fig_path = out / "sweep.png"
        plots.save_sweep_curve(fig_path, rows)
        print(f"figure: {fig_path}")
    return 0


def _cmd_schedule_sim(args) -> int:
    ck = _load_model(args.model)
    seqs, labels = _load_encoded(ck, args.data, args.limit)
    policy = _policy_from_args(args)
    cm = CostModel(
        step_base=args.cost_base,
        step_per_slot=args.cost_per_slot,
        embed_per_sample=args.cost_embed,
        classify_per_call=args.cost_classify,
    )
    out = _out_dir(args)
    rows, logs = scheduler.compare_strategies(seqs, ck.params, policy, args.batch_slots, cm, labels)
    if args.strategy != "all":
        rows = [r for r in rows if r.strategy == args.strategy]

    comparison_path = out / "comparison.csv"
    experiments.write_comparison_csv(comparison_path, rows)
    # per-sample results come from the slot-refill run (identical exits to case2/case4)
    samples_log = logs["alg1" if args.strategy == "all" else args.strategy]
    samples_path = out / "samples.csv"
    experiments.write_samples_csv(samples_path, samples_log)
    steps_path = out / "steps.csv"
    experiments.write_steps_csv(steps_path, [logs[r.strategy] for r in rows])
    print(f"comparison table: {comparison_path}")
    print(f"per-sample results: {samples_path}")
    print(f"per-step occupancy: {steps_path}")
    for row in rows:
        print(
            f"  {row.strategy:6s} N={row.n_slots:<3d} accuracy={row.accuracy:.4f} "
            f"ratio={row.compute_ratio:.4f} time={row.sim_time:.4f} "
            f"throughput={row.throughput:.1f} speedup={row.speedup:.2f}x"
        )
    if not args.no_figures:
        from . import plots

        strat_fig = out / "strategies.png"
        plots.save_strategy_report(strat_fig, rows)
        occ_fig = out / "occupancy.png"
        plots.save_occupancy_timeline(occ_fig, [logs[r.strategy] for r in rows if r.strategy != "case1"])
        print(f"figures: {strat_fig}, {occ_fig}")
    return 0


def _cmd_trace_attention(args) -> int:
    ck = _load_model(args.model)
    vocab = datamod.Vocab(ck.vocab_tokens)
    text = datamod.preprocess(args.text) if not args.raw else args.text
    if not text:
        raise ValueError("text is empty after preprocessing")
    seq = vocab.encode(text, ck.params.config.seq_len)
    matrix = experiments.export_attention_trace(ck.params, seq)
    tokens = vocab.decode_tokens(seq)
    out = _out_dir(args)
    csv_path = out / "attention.csv"
    experiments.write_attention_csv(csv_path, matrix, tokens)
    print(f"attention trace: {csv_path}")
    if not args.no_figures:
        from . import plots

        fig_path = out / "attention.png"
        plots.save_attention_heatmap(fig_path, matrix, tokens)
        print(f"figure: {fig_path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loopformer",
        description="Adaptive-depth text classifier with early exit and slot-refill batching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a balanced synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("preprocess", help="clean a label<TAB>text dataset file")
    p.add_argument("--input", "--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--stopwords", default=None, help="file with one stopword per whitespace run")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--val", default=None, help="validation file; omitted -> 60/20/20 split of --data")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="flat 'key = value' config file")
    for key in _MODEL_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}", type=int, default=None)
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--beta2", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--stop-accuracy", type=float, default=None, help="stop once validation accuracy reaches this")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch-slots", type=int, default=8)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--depth-override", type=int, default=None, help="plain compression: run only the first k layers")
    _add_policy_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="threshold sweep over a delta grid")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--deltas", default=None, help="comma-separated grid (default 0.1..1.0 step 0.1)")
    p.add_argument("--batch-slots", type=int, default=8)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out-dir", default="reports")
    p.add_argument("--no-figures", action="store_true")
    _add_policy_flags(p, with_delta=False)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("schedule-sim", help="compare execution strategies under the cost model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", choices=STRATEGIES + ("all",), default="all")
    p.add_argument("--batch-slots", type=int, default=8)
    p.add_argument("--limit", type=int, default=None)
    default_cm = scheduler.DEFAULT_COST_MODEL
    p.add_argument("--cost-base", type=float, default=default_cm.step_base, help="step cost intercept a")
    p.add_argument("--cost-per-slot", type=float, default=default_cm.step_per_slot, help="step cost slope b")
    p.add_argument("--cost-embed", type=float, default=default_cm.embed_per_sample)
    p.add_argument("--cost-classify", type=float, default=default_cm.classify_per_call)
    p.add_argument("--out-dir", default="reports")
    p.add_argument("--no-figures", action="store_true")
    _add_policy_flags(p)
    p.set_defaults(func=_cmd_schedule_sim)

    p = sub.add_parser("trace-attention", help="export cumulative attention for one text")
    p.add_argument("--model", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--raw", action="store_true", help="skip preprocessing")
    p.add_argument("--out-dir", default="reports")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_trace_attention)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
