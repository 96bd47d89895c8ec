"""Command-line entry point: ``lear <subcommand> [--flags]``.

Exit codes: 0 success, 1 invalid input or a failed check, 2 runtime failure
(for example divergence during training).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import LearError, DivergenceError, StaleCacheError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _read_jsonl(path) -> list[dict]:
    from .errors import ValidationError

    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
    return rows


def _write_text(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_train(args) -> int:
    from .data import LabelFile, build_vocab, load_corpus
    from .training import build_model, load_config, train

    model_cfg, train_cfg = load_config(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
    labels = LabelFile.load(args.labels)
    train_set = load_corpus(args.train, labels, split="train")
    dev = load_corpus(args.dev, labels, split="dev") if args.dev else None
    vocab = build_vocab([train_set] + ([dev] if dev else []), labels)
    train_set.vocab = vocab
    model_cfg.mode = train_cfg.mode
    model = build_model(model_cfg, train_set, labels, train_cfg.seed)

    def report(e):
        print(f"epoch {e.epoch}\tloss {e.loss:.6f}\tP {e.precision:.4f}\tR {e.recall:.4f}\tF1 {e.f1:.4f}",
              file=sys.stderr)

    result = train(model, train_set, train_cfg, dev, on_epoch=report)
    Path(args.out).write_bytes(result.checkpoint)
    metrics = args.metrics or f"{args.out}.metrics.csv"
    Path(metrics).write_text(result.metrics_csv(), encoding="utf-8")
    if args.log:
        Path(args.log).write_text("step\tlr\tL_s\tL_e\tL_match\ttotal\n" + "\n".join(result.step_log) + "\n",
                                  encoding="utf-8")
    print(f"best dev F1 {result.best_f1:.4f} at epoch {result.best_epoch}; checkpoint written to {args.out}")
    return EXIT_OK


def _load_predictions(path) -> dict:
    out = {}
    for k, row in enumerate(_read_jsonl(path)):
        out[row.get("text_id", k)] = row.get("spans", [])
    return out


def cmd_eval(args) -> int:
    from .data import load_corpus
    from .errors import ConfigError
    from .metrics import evaluate
    from .model import LearModel
    from .training import predict_corpus

    if args.gold and args.pred:
        report = evaluate(_load_predictions(args.pred), _load_predictions(args.gold))
    elif args.model and args.data:
        model = LearModel.load(args.model)
        corpus = load_corpus(args.data, model.labels, model.vocab, split="eval")
        preds = predict_corpus(model, corpus, args.decode or None, args.threshold)
        report = evaluate(preds, {r.text_id: r.spans for r in corpus})
    else:
        raise ConfigError("eval needs either --gold and --pred, or --model and --data")
    print(report.dumps() if args.json else report.format())
    return EXIT_OK


def _texts(path) -> list[tuple[object, str]]:
    from .errors import ValidationError

    rows = []
    for k, row in enumerate(_read_jsonl(path)):
        if "text" not in row:
            raise ValidationError(f"{path}: record {k} has no 'text'")
        rows.append((row.get("text_id", k), str(row["text"])))
    return rows


def cmd_predict(args) -> int:
    from .model import LearModel

    model = LearModel.load(args.model)
    cache = model.build_label_cache()
    rows = _texts(args.input)
    lines = []
    for i in range(0, len(rows), args.batch_size):
        chunk = rows[i:i + args.batch_size]
        ids = [model.tokenize(text).ids for _, text in chunk]
        spans, extras = model.predict_tokens(ids, args.decode or None, args.threshold, cache,
                                             keep_scores=args.dump_scores)
        for (text_id, _), s, extra in zip(chunk, spans, extras):
            obj = {"text_id": text_id, "spans": [p.to_json() for p in s]}
            if args.dump_scores:
                obj["start_scores"] = extra["start"].tolist()
                obj["end_scores"] = extra["end"].tolist()
            lines.append(json.dumps(obj, ensure_ascii=False))
    _write_text(args.out, "".join(line + "\n" for line in lines))
    return EXIT_OK


def cmd_inspect_attention(args) -> int:
    from .model import LearModel

    model = LearModel.load(args.model)
    label_tokens = model.label_set.tokens(model.vocab)
    if model.cfg.fusion_mode == "sentence-similarity":
        label_tokens = [["<sentence>"] for _ in label_tokens]
    out = ["token\tcategory\tannotation_token\tweight"]
    for _, text in _texts(args.input):
        tok = model.tokenize(text)
        _, extras = model.predict_tokens([tok.ids], None, args.threshold, keep_attention=True)
        att = extras[0]["attention"]  # (n, C, m)
        for i, word in enumerate(tok.tokens[:att.shape[0]]):
            for c, name in enumerate(model.categories):
                for j, ann in enumerate(label_tokens[c]):
                    out.append(f"{word}\t{name}\t{ann}\t{att[i, c, j]!r}")
    _write_text(args.out, "\n".join(out) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import BenchConfig, format_report, records_csv, run_sweep

    cfg = BenchConfig(d_model=args.d_model, n_layers=args.layers, n=args.n, m=args.m, texts=args.texts,
                      seed=args.seed)
    paradigms = [p.strip() for p in args.paradigms.split(",") if p.strip()]
    categories = [int(c) for c in args.categories.split(",") if c.strip()]
    phases = [p.strip() for p in args.phases.split(",") if p.strip()]
    records = run_sweep(paradigms, categories, phases, cfg)
    if args.out:
        Path(args.out).write_text(records_csv(records), encoding="utf-8")
    print(format_report(records, cfg))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .training import gradcheck_model

    report = gradcheck_model(args.seed, args.h, args.tol)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_synth(args) -> int:
    from .data import SynthSpec, save_corpus, synth_corpus

    spec = SynthSpec(num_categories=args.categories, sentences=args.sentences, dev_sentences=args.dev_sentences,
                     test_sentences=args.test_sentences, mode="nested" if args.nested else "flat")
    splits, labels = synth_corpus(spec, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, corpus in splits.items():
        save_corpus(corpus, out / f"{name}.jsonl")
    labels.save(out / "labels.json")
    print(f"wrote {', '.join(f'{k}.jsonl ({len(v)})' for k, v in splits.items())} and labels.json to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lear", description="Label-aware span extraction toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="metrics CSV path (default: <out>.metrics.csv)")
    p.add_argument("--log", help="per-step loss log (tab-separated)")
    p.add_argument("--seed", type=int, help="overrides the config file's seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against gold spans")
    p.add_argument("--gold")
    p.add_argument("--pred")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--decode", choices=["heuristic", "nearest", "nested"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--json", action="store_true", help="print the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="decode spans for a JSON-lines file of texts")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--decode", choices=["heuristic", "nearest", "nested"])
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dump-scores", action="store_true")
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="compare traditional, qa and lear inference cost")
    p.add_argument("--paradigms", default="traditional,qa,lear")
    p.add_argument("--categories", default="3,7,33")
    p.add_argument("--phases", default="inference")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--texts", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of the nested-mode gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write a synthetic corpus and label file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--categories", type=int, default=3)
    p.add_argument("--sentences", type=int, default=30)
    p.add_argument("--dev-sentences", type=int, default=10)
    p.add_argument("--test-sentences", type=int, default=10)
    p.add_argument("--nested", action="store_true")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect-attention", help="dump fusion attention weights as TSV")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect_attention)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DivergenceError, StaleCacheError) as exc:
        print(f"lear: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (LearError, ValueError, KeyError, OSError) as exc:
        print(f"lear: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
