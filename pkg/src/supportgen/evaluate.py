"""Generation + scoring of a dialogue split into a full metric report."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .cognition import CognitiveStateProvider
from .corpus import Dialogue
from .metrics import (
    MetricReport,
    corpus_bleu,
    corpus_rouge_l,
    distinct_n,
    strategy_acc,
)
from .model import SamplerConfig, SupportModel
from .retrieval import RetrievalIndex
from .text import TokenSeq, decode, tokenize
from .training import TrainingExample, build_examples, corpus_ppl

DEFAULT_TOP_N = (1, 2, 3, 5)


@dataclass
class EvalOutput:
    report: MetricReport
    generations: list[dict] = field(default_factory=list)


def greedy_sampler(seed: int = 0) -> SamplerConfig:
    return SamplerConfig(top_k=1, top_p=1.0, repetition_penalty=1.0, seed=seed)


def evaluate_examples(
    model: SupportModel,
    examples: list[TrainingExample],
    sampler: SamplerConfig,
    top_n: Sequence[int] = DEFAULT_TOP_N,
) -> EvalOutput:
    vocab = model.vocab
    strategy_id_set = set(vocab.strategy_ids)
    candidates = []
    references = []
    predictions = []
    gold = []
    generations = []
    for i, ex in enumerate(examples):
        memory = model.forward_fusion(ex.context, ex.demos, ex.bundle)
        per_example_sampler = SamplerConfig(
            top_k=sampler.top_k,
            top_p=sampler.top_p,
            repetition_penalty=sampler.repetition_penalty,
            seed=sampler.seed + i,
        )
        sampled = model.sample_response(memory, per_example_sampler)
        # Strip the leading strategy marker before text metrics.
        body = tuple(t for t in sampled.ids if t not in strategy_id_set)
        gen_text = decode(TokenSeq(body), vocab)
        # References use the same tokenizer normalization as the candidates.
        ref_target = tuple(
            t for t in ex.target.ids if t not in strategy_id_set and t != vocab.eos_id
        )
        ref_text = decode(TokenSeq(ref_target), vocab)
        candidates.append(tokenize(gen_text))
        references.append(tokenize(ref_text))
        predictions.append(model.predict_strategy(memory, n=8))
        gold.append(ex.gold_strategy)
        generations.append(
            {
                "dialogue_id": ex.dialogue_id,
                "post": ex.post,
                "generated": decode(sampled, vocab),
                "reference": ref_text,
                "gold_strategy": ex.gold_strategy,
                "predicted_strategy": predictions[-1][0],
            }
        )

    acc_top_n = {n: strategy_acc(predictions, gold, n) for n in top_n}
    report = MetricReport(
        acc=strategy_acc(predictions, gold, 1),
        acc_top_n=acc_top_n,
        ppl=corpus_ppl(model, examples),
        bleu={n: corpus_bleu(candidates, [[r] for r in references], n) for n in (1, 2, 3, 4)},
        distinct={n: distinct_n(candidates, n) for n in (1, 2)},
        rouge_l=corpus_rouge_l(candidates, references),
    )
    return EvalOutput(report=report, generations=generations)


def evaluate_split(
    model: SupportModel,
    dialogues: list[Dialogue],
    index: RetrievalIndex,
    provider: CognitiveStateProvider,
    sampler: Optional[SamplerConfig] = None,
    top_s: int = 3,
    top_n: Sequence[int] = DEFAULT_TOP_N,
    exclude_self: bool = False,
) -> EvalOutput:
    examples = build_examples(
        dialogues,
        index,
        provider,
        model.vocab,
        model.config,
        top_s=top_s,
        exclude_self=exclude_self,
    )
    return evaluate_examples(model, examples, sampler or greedy_sampler(), top_n)
