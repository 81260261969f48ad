"""Objective, optimization loop, and checkpoint selection.

Per-example preprocessing (retrieval with self-exclusion, cognitive-state
generation, tokenization) is done once before the first epoch; the retriever
and state provider are frozen so their outputs never change across epochs.
"""

from __future__ import annotations

import json
import logging
import math
import random
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import torch

from .cognition import CognitiveBundle, CognitiveStateProvider, generate_states
from .corpus import Dialogue
from .model import ModelConfig, SupportModel
from .retrieval import (
    RetrievalIndex,
    assemble_demonstrations,
    compose_query,
    retrieve_top_s,
)
from .text import TokenSeq, Vocabulary, encode

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3  # from-scratch toy models; see FULL_SCALE_PROFILE for fine-tuning
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_train: int = 4
    batch_valid: int = 16
    max_epochs: int = 10
    max_steps: Optional[int] = None
    checkpoint_min_epoch: int = 6
    top_s: int = 3
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise TrainingError("lr must be positive")
        if self.checkpoint_min_epoch > self.max_epochs:
            raise TrainingError("checkpoint_min_epoch must be <= max_epochs")


# Reference settings for fine-tuning a pretrained full-scale backbone.
FULL_SCALE_PROFILE = TrainConfig(lr=1.5e-5, batch_train=4, batch_valid=16)


@dataclass
class TrainingExample:
    context: TokenSeq
    demos: TokenSeq
    bundle: CognitiveBundle
    target: TokenSeq
    gold_strategy: int
    dialogue_id: str
    post: str


def render_context(turns, upto: int) -> str:
    """Speaker-marked concatenation of the turns before index ``upto``."""
    parts = []
    for turn in turns[:upto]:
        marker = "User:" if turn.speaker == "seeker" else "System:"
        parts.append(f"{marker} {turn.text}")
    return " ".join(parts)


def build_examples(
    dialogues: list[Dialogue],
    index: RetrievalIndex,
    provider: CognitiveStateProvider,
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    top_s: int = 3,
    exclude_self: bool = True,
) -> list[TrainingExample]:
    """Precompute one training example per supporter turn with a preceding post."""
    own_passages: dict[tuple[str, str, str], set[int]] = {}
    for p in index.passages:
        key = (p.source_dialogue_id, p.query_text, p.response_text)
        own_passages.setdefault(key, set()).add(p.passage_id)

    examples = []
    for d in dialogues:
        prev_seeker = None
        for k, turn in enumerate(d.turns):
            if turn.speaker == "seeker":
                prev_seeker = turn.text
                continue
            if prev_seeker is None:
                continue
            query = compose_query(prev_seeker, d.persona)
            exclude = None
            if exclude_self:
                exclude = own_passages.get((d.id, prev_seeker, turn.text))
            demos = retrieve_top_s(index, query, s=top_s, exclude=exclude)
            demo_text = assemble_demonstrations(demos, vocab, cap=model_cfg.max_enc_len)
            bundle = generate_states(provider, prev_seeker)
            ctx = encode(
                render_context(d.turns, k), vocab, cap=model_cfg.max_enc_len, keep="tail"
            )
            target_body = encode(
                f"{turn.strategy.token} {turn.text}", vocab, cap=model_cfg.max_dec_len - 1
            )
            target = TokenSeq(tuple(target_body.ids) + (vocab.eos_id,))
            examples.append(
                TrainingExample(
                    context=ctx,
                    demos=encode(demo_text, vocab, cap=model_cfg.max_enc_len),
                    bundle=bundle,
                    target=target,
                    gold_strategy=turn.strategy.id,
                    dialogue_id=d.id,
                    post=prev_seeker,
                )
            )
    return examples


def nll_loss(logprobs: torch.Tensor, target: TokenSeq, pad_id: int) -> torch.Tensor:
    """Mean negative log-likelihood over the non-PAD target positions."""
    if logprobs.shape[0] != len(target):
        raise TrainingError(
            f"logprobs rows {logprobs.shape[0]} != target length {len(target)}"
        )
    ids = torch.tensor(target.ids, dtype=torch.long)
    keep = ids != pad_id
    if not keep.any():
        raise TrainingError("target contains only PAD")
    picked = logprobs[torch.arange(len(target)), ids]
    return -picked[keep].mean()


def example_nll(model: SupportModel, ex: TrainingExample, trace=None) -> torch.Tensor:
    memory = model.forward_fusion(ex.context, ex.demos, ex.bundle, trace=trace)
    logprobs = model.target_logprobs(ex.target, memory, trace=trace)
    return nll_loss(logprobs, ex.target, model.vocab.pad_id)


@torch.no_grad()
def corpus_ppl(model: SupportModel, examples: list[TrainingExample]) -> float:
    """exp of the token-weighted mean NLL, teacher-forced."""
    if not examples:
        raise TrainingError("cannot compute perplexity on an empty split")
    total_nll = 0.0
    total_tokens = 0
    for ex in examples:
        n = len(ex.target)
        total_nll += float(example_nll(model, ex)) * n
        total_tokens += n
    return math.exp(total_nll / total_tokens)


def validation_ppl(
    model: SupportModel,
    valid: list[Dialogue],
    index: RetrievalIndex,
    provider: CognitiveStateProvider,
) -> float:
    examples = build_examples(
        valid, index, provider, model.vocab, model.config, exclude_self=False
    )
    return corpus_ppl(model, examples)


@dataclass
class TrainResult:
    best_epoch: int
    best_ppl: float
    best_path: Path
    history: list[dict] = field(default_factory=list)


def train(
    model: SupportModel,
    train_examples: list[TrainingExample],
    valid_examples: list[TrainingExample],
    cfg: TrainConfig,
    out_dir: str | Path,
    log_hook: Optional[Callable[[dict], None]] = None,
    instrument: Optional[list[list[str]]] = None,
) -> TrainResult:
    """Run the optimization loop and return the lowest-validation-PPL checkpoint.

    Every epoch is checkpointed; best-checkpoint selection only considers
    epochs >= ``checkpoint_min_epoch``.
    """
    if not train_examples:
        raise TrainingError("no training examples")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2)
    )
    rng = random.Random(cfg.seed)
    log_path = out_dir / "train_log.jsonl"
    step = 0
    best_ppl = float("inf")
    best_epoch = -1
    best_path = out_dir / "best.bin"
    history: list[dict] = []

    with log_path.open("w") as log_fh:
        for epoch in range(1, cfg.max_epochs + 1):
            order = list(range(len(train_examples)))
            rng.shuffle(order)
            for start in range(0, len(order), cfg.batch_train):
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    break
                batch = [train_examples[i] for i in order[start : start + cfg.batch_train]]
                optimizer.zero_grad()
                traces = []
                losses = []
                for ex in batch:
                    trace = ["dds"] if instrument is not None else None
                    losses.append(example_nll(model, ex, trace=trace))
                    if trace is not None:
                        trace.append("nll")
                        traces.append(trace)
                loss = torch.stack(losses).mean()
                if not torch.isfinite(loss):
                    dump = out_dir / f"diagnostic-step{step}.json"
                    dump.write_text(
                        json.dumps(
                            {
                                "step": step,
                                "epoch": epoch,
                                "losses": [float(x.detach()) for x in losses],
                                "lambda": [float(x) for x in model.fusion_weights().detach()],
                            }
                        )
                    )
                    raise TrainingError(f"non-finite loss at step {step}; state in {dump}")
                loss.backward()
                if cfg.grad_clip:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                step += 1
                if instrument is not None:
                    for trace in traces:
                        trace.append("gradient_step")
                        instrument.append(trace)
                record = {
                    "step": step,
                    "epoch": epoch,
                    "loss": float(loss.detach()),
                    "lr": cfg.lr,
                    "lambda": [float(x) for x in model.fusion_weights().detach()],
                }
                log_fh.write(json.dumps(record) + "\n")
                history.append(record)
                if log_hook:
                    log_hook(record)

            ckpt_path = out_dir / f"ckpt-epoch{epoch}.bin"
            model.save_checkpoint(ckpt_path)
            if epoch >= cfg.checkpoint_min_epoch and valid_examples:
                ppl = corpus_ppl(model, valid_examples)
                history.append({"epoch": epoch, "valid_ppl": ppl})
                log_fh.write(json.dumps({"epoch": epoch, "valid_ppl": ppl}) + "\n")
                logger.info("epoch %d validation ppl %.4f", epoch, ppl)
                if ppl < best_ppl:
                    best_ppl = ppl
                    best_epoch = epoch
                    shutil.copyfile(ckpt_path, best_path)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break

    if best_epoch < 0:
        # Loop ended before the first eligible validation epoch; fall back to last.
        model.save_checkpoint(best_path)
        best_epoch = min(cfg.max_epochs, cfg.checkpoint_min_epoch)
        best_ppl = corpus_ppl(model, valid_examples) if valid_examples else float("nan")
    return TrainResult(best_epoch=best_epoch, best_ppl=best_ppl, best_path=best_path, history=history)
