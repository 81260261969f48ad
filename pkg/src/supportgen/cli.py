"""Command-line entry points wiring corpus, retrieval, cognition, model,
training, and evaluation into end-to-end runs."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from . import report as reportmod
from .cognition import TemplateStateProvider
from .corpus import (
    ALL_STRATEGIES,
    CorpusError,
    SplitSpec,
    Turn,
    build_retrieval_base,
    load_corpus,
    load_retrieval_base,
    save_corpus,
    save_retrieval_base,
    split_corpus,
)
from .evaluate import evaluate_split, greedy_sampler
from .metrics import DEFAULT_DIRECTIONS, s_norm
from .model import ModelConfig, SamplerConfig, SupportModel, load_checkpoint
from .retrieval import HashedBowEmbedder, RetrievalIndex, retrieve_top_s
from .text import Vocabulary, build_vocab
from .training import TrainConfig, build_examples, train


@dataclass
class RunConfig:
    """Single static configuration record for a full run."""

    corpus_path: str = "corpus.json"
    out_dir: str = "out"
    seed: int = 0
    split: dict = field(default_factory=dict)
    vocab: dict = field(default_factory=lambda: {"min_count": 1})
    retrieval: dict = field(default_factory=lambda: {"dim": 256, "top_s": 3})
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    eval: dict = field(
        default_factory=lambda: {"greedy": True, "top_n": [1, 2, 3, 5], "exclude_self": False}
    )

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        cfg = cls()
        if path:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            known = {f.name for f in fields(cls)}
            unknown = set(data) - known
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            for key, value in data.items():
                if isinstance(getattr(cfg, key), dict) and isinstance(value, dict):
                    getattr(cfg, key).update(value)
                else:
                    setattr(cfg, key, value)
        return cfg

    def apply_overrides(self, overrides: list[str]) -> None:
        for item in overrides:
            if "=" not in item:
                raise ValueError(f"--set expects key=value, got {item!r}")
            key, raw = item.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            parts = key.split(".")
            target = self
            for part in parts[:-1]:
                target = getattr(target, part) if isinstance(target, RunConfig) else target[part]
            if isinstance(target, RunConfig):
                setattr(target, parts[-1], value)
            else:
                target[parts[-1]] = value

    # ------------------------------------------------------------ constructors

    def split_spec(self) -> SplitSpec:
        return SplitSpec(**{**{"seed": self.seed}, **self.split})

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **self.model)

    def train_config(self) -> TrainConfig:
        merged = {"seed": self.seed, "top_s": self.retrieval.get("top_s", 3), **self.train}
        return TrainConfig(**merged)

    def sampler_config(self) -> SamplerConfig:
        if self.eval.get("greedy", True):
            return greedy_sampler(self.seed)
        return SamplerConfig(**{**{"seed": self.seed}, **self.sampler})


def _artifact_paths(out_dir: Path) -> dict[str, Path]:
    return {
        "train": out_dir / "train_split.json",
        "valid": out_dir / "valid_split.json",
        "test": out_dir / "test_split.json",
        "vocab": out_dir / "vocab.json",
        "base": out_dir / "retrieval_base.json",
        "index": out_dir / "index.bin",
    }


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing artifact: {what} ({path}); run `ingest` first")
    return path


def _load_artifacts(cfg: RunConfig):
    paths = _artifact_paths(Path(cfg.out_dir))
    vocab = Vocabulary.load(_require(paths["vocab"], "vocabulary"))
    splits = {
        name: load_corpus(_require(paths[name], f"{name} split"))
        for name in ("train", "valid", "test")
    }
    index = RetrievalIndex.load(
        _require(paths["index"], "retrieval index"),
        HashedBowEmbedder(dim=cfg.retrieval.get("dim", 256)),
    )
    return vocab, splits, index


# --------------------------------------------------------------------- ingest


def cmd_ingest(cfg: RunConfig, args) -> int:
    corpus_path = args.corpus or cfg.corpus_path
    dialogues = load_corpus(corpus_path)  # parse fully before writing anything
    spec = cfg.split_spec()
    train_d, valid_d, test_d = split_corpus(dialogues, spec)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = _artifact_paths(out_dir)
    save_corpus(train_d, paths["train"])
    save_corpus(valid_d, paths["valid"])
    save_corpus(test_d, paths["test"])
    vocab = build_vocab(train_d, min_count=cfg.vocab.get("min_count", 1))
    vocab.save(paths["vocab"])
    base = build_retrieval_base(train_d)
    save_retrieval_base(base, paths["base"])
    index = RetrievalIndex.build(base, HashedBowEmbedder(dim=cfg.retrieval.get("dim", 256)))
    index.save(paths["index"])
    print(
        json.dumps(
            {
                "dialogues": len(dialogues),
                "train": len(train_d),
                "valid": len(valid_d),
                "test": len(test_d),
                "vocab_size": len(vocab),
                "passages": len(base),
            }
        )
    )
    return 0


def cmd_build_index(cfg: RunConfig, args) -> int:
    paths = _artifact_paths(Path(cfg.out_dir))
    base = load_retrieval_base(_require(paths["base"], "retrieval base"))
    index = RetrievalIndex.build(base, HashedBowEmbedder(dim=cfg.retrieval.get("dim", 256)))
    index.save(paths["index"])
    print(json.dumps({"passages": len(base), "dim": index.dim}))
    return 0


# ---------------------------------------------------------------------- train


def cmd_train(cfg: RunConfig, args) -> int:
    vocab, splits, index = _load_artifacts(cfg)
    model_cfg = cfg.model_config(len(vocab))
    train_cfg = cfg.train_config()
    model = SupportModel(model_cfg, vocab)
    provider = TemplateStateProvider()
    train_ex = build_examples(
        splits["train"], index, provider, vocab, model_cfg,
        top_s=train_cfg.top_s, exclude_self=True,
    )
    valid_ex = build_examples(
        splits["valid"], index, provider, vocab, model_cfg,
        top_s=train_cfg.top_s, exclude_self=False,
    )
    run_dir = Path(cfg.out_dir) / "run"
    result = train(model, train_ex, valid_ex, train_cfg, run_dir)
    reportmod.plot_loss_curve(result.history, run_dir / "loss_curve.png")
    reportmod.plot_fusion_weights(result.history, run_dir / "fusion_weights.png")
    print(
        json.dumps(
            {
                "best_epoch": result.best_epoch,
                "best_valid_ppl": result.best_ppl,
                "checkpoint": str(result.best_path),
                "steps": sum(1 for h in result.history if "loss" in h),
            }
        )
    )
    return 0


# ------------------------------------------------------------------- evaluate


def cmd_evaluate(cfg: RunConfig, args) -> int:
    vocab, splits, index = _load_artifacts(cfg)
    ckpt = args.checkpoint or str(Path(cfg.out_dir) / "run" / "best.bin")
    model = load_checkpoint(_require(Path(ckpt), "checkpoint"), vocab)
    dialogues = splits[args.split]
    out = evaluate_split(
        model,
        dialogues,
        index,
        TemplateStateProvider(),
        sampler=cfg.sampler_config(),
        top_s=cfg.retrieval.get("top_s", 3),
        top_n=tuple(cfg.eval.get("top_n", [1, 2, 3, 5])),
        exclude_self=cfg.eval.get("exclude_self", False),
    )
    eval_dir = Path(cfg.out_dir) / f"eval-{args.split}"
    eval_dir.mkdir(parents=True, exist_ok=True)
    (eval_dir / "metrics.json").write_text(out.report.to_json())
    reportmod.write_tsv([{"split": args.split, **out.report.as_row()}], eval_dir / "metrics.tsv")
    reportmod.plot_top_n_accuracy(out.report.acc_top_n, eval_dir / "top_n_accuracy.png")
    with (eval_dir / "generations.jsonl").open("w") as fh:
        for g in out.generations:
            fh.write(json.dumps(g, ensure_ascii=False) + "\n")
    print(out.report.to_json())
    return 0


# ------------------------------------------------------------------- retrieve


def cmd_retrieve(cfg: RunConfig, args) -> int:
    index_path = args.index or str(_artifact_paths(Path(cfg.out_dir))["index"])
    index = RetrievalIndex.load(
        _require(Path(index_path), "retrieval index"),
        HashedBowEmbedder(dim=cfg.retrieval.get("dim", 256)),
    )
    demos = retrieve_top_s(index, args.query, s=args.top_s)
    print(
        json.dumps(
            [{"passage_id": d.passage_id, "score": d.score, "text": d.text} for d in demos],
            indent=1,
            ensure_ascii=False,
        )
    )
    return 0


# ---------------------------------------------------------------------- sweep


def cmd_sweep_top_s(cfg: RunConfig, args) -> int:
    values = [int(v) for v in args.values.split(",")]
    vocab, splits, index = _load_artifacts(cfg)
    provider = TemplateStateProvider()
    rows = []
    for s in values:
        try:
            model_cfg = cfg.model_config(len(vocab))
            train_cfg = cfg.train_config()
            train_cfg.top_s = s
            model = SupportModel(model_cfg, vocab)
            train_ex = build_examples(
                splits["train"], index, provider, vocab, model_cfg, top_s=s, exclude_self=True
            )
            valid_ex = build_examples(
                splits["valid"], index, provider, vocab, model_cfg, top_s=s, exclude_self=False
            )
            run_dir = Path(cfg.out_dir) / f"sweep-s{s}"
            train(model, train_ex, valid_ex, train_cfg, run_dir)
            model = load_checkpoint(run_dir / "best.bin", vocab)
            out = evaluate_split(
                model, splits["test"], index, provider,
                sampler=cfg.sampler_config(), top_s=s,
            )
            r = out.report
            rows.append(
                {
                    "top_s": s,
                    "acc": r.acc,
                    "b1": r.bleu[1],
                    "b2": r.bleu[2],
                    "b3": r.bleu[3],
                    "b4": r.bleu[4],
                    "rl": r.rouge_l,
                }
            )
        except Exception as exc:  # keep sweeping; report the failure in the table
            print(f"sweep value s={s} failed: {exc}", file=sys.stderr)
            rows.append({"top_s": s, "error": str(exc)})
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reportmod.write_tsv(rows, out_dir / "sweep_top_s.tsv")
    reportmod.plot_sweep(
        [r for r in rows if "error" not in r], ("acc", "b1", "b2", "b3", "b4", "rl"),
        out_dir / "sweep_top_s.png",
    )
    print((out_dir / "sweep_top_s.tsv").read_text(), end="")
    return 0


# --------------------------------------------------------------------- s-norm


def _read_metric_table(path: Path) -> dict[str, dict[str, Optional[float]]]:
    if path.suffix.lower() == ".csv":
        table: dict[str, dict[str, Optional[float]]] = {}
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            key = reader.fieldnames[0]
            for row in reader:
                method = row[key]
                table[method] = {
                    m.strip().lower(): (float(v) if v not in (None, "", "-") else None)
                    for m, v in row.items()
                    if m != key
                }
        return table
    data = json.loads(path.read_text(encoding="utf-8"))
    return {
        method: {m.lower(): (float(v) if v is not None else None) for m, v in row.items()}
        for method, row in data.items()
    }


def cmd_s_norm(cfg: RunConfig, args) -> int:
    table = _read_metric_table(Path(args.table))
    scores = s_norm(table, DEFAULT_DIRECTIONS)
    width = max(len(m) for m in scores)
    for method, value in scores.items():
        print(f"{method:<{width}}  {value:.2f}")
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(scores, indent=1))
    return 0


# ----------------------------------------------------------------------- chat


def cmd_chat(cfg: RunConfig, args) -> int:
    from .training import render_context
    from .cognition import generate_states
    from .retrieval import assemble_demonstrations, compose_query
    from .text import TokenSeq, decode, encode

    vocab, _, index = _load_artifacts(cfg)
    ckpt = args.checkpoint or str(Path(cfg.out_dir) / "run" / "best.bin")
    model = load_checkpoint(_require(Path(ckpt), "checkpoint"), vocab)
    provider = TemplateStateProvider()
    sampler = cfg.sampler_config()
    persona = args.persona or ""
    turns: list[Turn] = []
    turn_no = 0
    print("Type a message; /reset, /show-lambda, /quit.", flush=True)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if line == "/quit":
            break
        if line == "/reset":
            turns.clear()
            print("(context cleared)", flush=True)
            continue
        if line == "/show-lambda":
            lam = [float(x) for x in model.fusion_weights().detach()]
            print(" ".join(f"{x:.4f}" for x in lam), flush=True)
            continue
        turns.append(Turn(speaker="seeker", text=line))
        query = compose_query(line, persona)
        demos = retrieve_top_s(index, query, s=cfg.retrieval.get("top_s", 3))
        demo_text = assemble_demonstrations(demos, vocab, cap=model.config.max_enc_len)
        bundle = generate_states(provider, line)
        ctx = encode(
            render_context(turns, len(turns)), vocab,
            cap=model.config.max_enc_len, keep="tail",
        )
        memory = model.forward_fusion(ctx, encode(demo_text, vocab), bundle)
        for d in demos:
            print(f"  demo #{d.passage_id} (score {d.score:.3f}): {d.text}")
        ranked = model.predict_strategy(memory, n=1)
        strategy = ALL_STRATEGIES[ranked[0]]
        turn_sampler = SamplerConfig(
            top_k=sampler.top_k, top_p=sampler.top_p,
            repetition_penalty=sampler.repetition_penalty, seed=sampler.seed + turn_no,
        )
        sampled = model.sample_response(memory, turn_sampler)
        response = decode(sampled, vocab)
        print(f"  strategy: {strategy.name}")
        print(f"supporter> {response}", flush=True)
        body = decode(TokenSeq(tuple(t for t in sampled.ids if t not in set(vocab.strategy_ids))), vocab)
        turns.append(Turn(speaker="supporter", text=body or response, strategy=strategy))
        turn_no += 1
    return 0


# ----------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supportgen")
    parser.add_argument("--config", help="path to a JSON run configuration")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--out", help="override the configured output directory")
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a config entry, e.g. --set model.d=32",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="split the corpus and build vocab, base, and index")
    p.add_argument("--corpus", help="corpus JSON path (defaults to the config entry)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-index", help="rebuild the retrieval index from the base")
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("train", help="run the optimization loop")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="generate and score a split")
    p.add_argument("--checkpoint", help="checkpoint path (defaults to run/best.bin)")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("retrieve", help="query the retrieval index")
    p.add_argument("--index", help="index path (defaults to the ingest artifact)")
    p.add_argument("--query", required=True)
    p.add_argument("--top-s", type=int, default=3, dest="top_s")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("sweep-top-s", help="train and evaluate across demonstration counts")
    p.add_argument("--values", default="1,3,5,10", help="comma-separated top-s values")
    p.set_defaults(func=cmd_sweep_top_s)

    p = sub.add_parser("s-norm", help="normalized aggregate score over a metric table")
    p.add_argument("--table", required=True, help="CSV or JSON metric table")
    p.add_argument("--json-out", dest="json_out", help="also write scores as JSON")
    p.set_defaults(func=cmd_s_norm)

    p = sub.add_parser("chat", help="interactive inspection REPL")
    p.add_argument("--checkpoint", help="checkpoint path (defaults to run/best.bin)")
    p.add_argument("--persona", help="persona text prepended to retrieval queries")
    p.set_defaults(func=cmd_chat)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out:
            cfg.out_dir = args.out
        cfg.apply_overrides(args.set)
        return args.func(cfg, args)
    except (CorpusError, ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
