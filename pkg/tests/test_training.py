import json
import math

import pytest
import torch

from supportgen.text import TokenSeq
from supportgen.training import (
    TrainConfig,
    TrainingError,
    build_examples,
    corpus_ppl,
    example_nll,
    nll_loss,
    render_context,
    train,
)

torch.set_default_dtype(torch.float64)


class TestNllLoss:
    def test_certain_prediction_has_zero_loss(self):
        lp = torch.full((2, 4), -1e9)
        lp[0, 2] = 0.0
        lp[1, 1] = 0.0
        loss = nll_loss(lp, TokenSeq((2, 1)), pad_id=0)
        assert float(loss) == 0.0

    def test_uniform_prediction_is_log_vocab(self):
        v = 7
        lp = torch.full((3, v), -math.log(v))
        loss = nll_loss(lp, TokenSeq((1, 2, 3)), pad_id=0)
        assert float(loss) == pytest.approx(math.log(v))

    def test_hand_computed_three_step_table(self):
        # Target probabilities 0.5, 0.25, 0.125 -> mean NLL = (ln2 + ln4 + ln8)/3 = 2 ln2.
        lp = torch.log(
            torch.tensor(
                [
                    [0.5, 0.5, 0.0 + 1e-300],
                    [0.25, 0.5, 0.25],
                    [0.125, 0.375, 0.5],
                ]
            )
        )
        loss = nll_loss(lp, TokenSeq((0, 0, 0)), pad_id=9)
        assert float(loss) == pytest.approx(2 * math.log(2))

    def test_pad_positions_excluded(self):
        lp = torch.log(torch.tensor([[0.5, 0.5], [0.9, 0.1]]))
        with_pad = nll_loss(lp, TokenSeq((1, 0)), pad_id=0)
        assert float(with_pad) == pytest.approx(-math.log(0.5))

    def test_all_pad_rejected(self):
        with pytest.raises(TrainingError):
            nll_loss(torch.zeros(2, 3), TokenSeq((0, 0)), pad_id=0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(TrainingError):
            nll_loss(torch.zeros(2, 3), TokenSeq((1, 1, 1)), pad_id=0)


class TestAdamStep:
    def test_first_step_matches_closed_form(self):
        torch.manual_seed(0)
        p = torch.nn.Parameter(torch.randn(6))
        before = p.detach().clone()
        lr, eps = 1e-3, 1e-8
        opt = torch.optim.Adam([p], lr=lr, betas=(0.9, 0.999), eps=eps)
        target = torch.randn(6)
        loss = (p - target).pow(2).sum()
        loss.backward()
        g = p.grad.detach().clone()
        opt.step()
        # After one step the bias-corrected moments reduce to g and g^2.
        expected = before - lr * g / (g.abs() + eps)
        assert torch.allclose(p.detach(), expected, atol=1e-10)

    def test_zero_gradient_leaves_params_unchanged(self):
        p = torch.nn.Parameter(torch.ones(4))
        opt = torch.optim.Adam([p], lr=0.5)
        p.grad = torch.zeros(4)
        opt.step()
        assert torch.equal(p.detach(), torch.ones(4))


class TestRenderContext:
    def test_speaker_markers(self, small_corpus):
        d = small_corpus[0]
        text = render_context(d.turns, 2)
        assert text.startswith("User: ")
        assert "System: " in text

    def test_upto_zero_is_empty(self, small_corpus):
        assert render_context(small_corpus[0].turns, 0) == ""


class TestBuildExamples:
    def test_one_example_per_answerable_supporter_turn(self, small_setup):
        corpus = small_setup["corpus"]
        expected = 0
        for d in corpus:
            seen = False
            for t in d.turns:
                if t.speaker == "seeker":
                    seen = True
                elif seen:
                    expected += 1
        assert len(small_setup["examples"]) == expected

    def test_target_opens_with_strategy_and_ends_with_eos(self, small_setup):
        vocab = small_setup["vocab"]
        for ex in small_setup["examples"]:
            assert ex.target.ids[0] in vocab.strategy_ids
            assert ex.target.ids[-1] == vocab.eos_id
            assert len(ex.target) <= small_setup["config"].max_dec_len

    def test_context_within_cap(self, small_setup):
        cap = small_setup["config"].max_enc_len
        for ex in small_setup["examples"]:
            assert 0 < len(ex.context) <= cap
            assert len(ex.demos) <= cap

    def test_self_exclusion_changes_retrieval(self, small_setup):
        included = build_examples(
            small_setup["corpus"],
            small_setup["index"],
            small_setup["provider"],
            small_setup["vocab"],
            small_setup["config"],
            exclude_self=False,
        )
        excluded = small_setup["examples"]
        assert any(a.demos != b.demos for a, b in zip(included, excluded))

    def test_deterministic(self, small_setup):
        again = build_examples(
            small_setup["corpus"],
            small_setup["index"],
            small_setup["provider"],
            small_setup["vocab"],
            small_setup["config"],
            exclude_self=True,
        )
        assert again == small_setup["examples"]


class TestPerplexity:
    def test_ppl_is_exp_of_token_weighted_mean_nll(self, tiny_model, small_setup):
        examples = small_setup["examples"][:4]
        total, count = 0.0, 0
        with torch.no_grad():
            for ex in examples:
                total += float(example_nll(tiny_model, ex)) * len(ex.target)
                count += len(ex.target)
        assert corpus_ppl(tiny_model, examples) == pytest.approx(math.exp(total / count))

    def test_empty_split_rejected(self, tiny_model):
        with pytest.raises(TrainingError):
            corpus_ppl(tiny_model, [])


def test_batch_gradient_is_mean_of_example_gradients(tiny_model, small_setup):
    examples = small_setup["examples"][:3]
    # Per-example pass.
    grads = []
    for ex in examples:
        tiny_model.zero_grad()
        example_nll(tiny_model, ex).backward()
        grads.append([p.grad.detach().clone() for p in tiny_model.parameters()])
    mean_grads = [torch.stack(gs).mean(dim=0) for gs in zip(*grads)]
    # Batched pass.
    tiny_model.zero_grad()
    torch.stack([example_nll(tiny_model, ex) for ex in examples]).mean().backward()
    for got, expected in zip((p.grad for p in tiny_model.parameters()), mean_grads):
        assert torch.allclose(got, expected, atol=1e-9)


class TestTrainLoop:
    def run_short(self, tiny_model, small_setup, tmp_path, **overrides):
        cfg = TrainConfig(
            lr=1e-3, batch_train=4, max_epochs=2, checkpoint_min_epoch=1, seed=0,
            **overrides,
        )
        examples = small_setup["examples"]
        instrument: list[list[str]] = []
        result = train(
            tiny_model, examples[:8], examples[8:12], cfg, tmp_path, instrument=instrument
        )
        return cfg, result, instrument

    def test_artifacts_and_selection(self, tiny_model, small_setup, tmp_path):
        cfg, result, _ = self.run_short(tiny_model, small_setup, tmp_path)
        assert (tmp_path / "best.bin").exists()
        for epoch in (1, 2):
            assert (tmp_path / f"ckpt-epoch{epoch}.bin").exists()
        valid_records = [r for r in result.history if "valid_ppl" in r]
        assert len(valid_records) == 2
        best = min(valid_records, key=lambda r: r["valid_ppl"])
        assert result.best_epoch == best["epoch"]
        assert result.best_ppl == best["valid_ppl"]

    def test_log_file_matches_history(self, tiny_model, small_setup, tmp_path):
        _, result, _ = self.run_short(tiny_model, small_setup, tmp_path)
        lines = (tmp_path / "train_log.jsonl").read_text().splitlines()
        assert [json.loads(l) for l in lines] == result.history

    def test_loss_decreases(self, tiny_model, small_setup, tmp_path):
        _, result, _ = self.run_short(tiny_model, small_setup, tmp_path)
        steps = [r["loss"] for r in result.history if "loss" in r]
        assert steps[-1] < steps[0]

    def test_instrumented_stage_sequence(self, tiny_model, small_setup, tmp_path):
        _, _, instrument = self.run_short(tiny_model, small_setup, tmp_path, max_steps=2)
        assert instrument
        expected = [
            "dds",
            "encode",
            "cognition.enc_enc",
            "cognition.enc_ref",
            "cognition.select",
            "cross_attention",
            "fusion",
            "layer_norm",
            "decode",
            "nll",
            "gradient_step",
        ]
        assert all(trace == expected for trace in instrument)

    def test_max_steps_stops_early(self, tiny_model, small_setup, tmp_path):
        _, result, _ = self.run_short(tiny_model, small_setup, tmp_path, max_steps=1)
        assert sum(1 for r in result.history if "loss" in r) == 1

    def test_lambda_logged_each_step(self, tiny_model, small_setup, tmp_path):
        _, result, _ = self.run_short(tiny_model, small_setup, tmp_path, max_steps=2)
        for r in result.history:
            if "loss" in r:
                assert len(r["lambda"]) == 5
                assert sum(r["lambda"]) == pytest.approx(1.0)


def test_train_config_validation():
    with pytest.raises(TrainingError):
        TrainConfig(lr=0.0)
    with pytest.raises(TrainingError):
        TrainConfig(checkpoint_min_epoch=11, max_epochs=10)
