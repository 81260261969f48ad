import json

import pytest
import torch

from supportgen.cognition import (
    RELATIONS,
    CognitionError,
    CognitiveBundle,
    CognitiveEncoder,
    CognitiveRefiner,
    CognitiveSelector,
    FileStateProvider,
    TemplateStateProvider,
    generate_states,
    post_hash,
)

torch.set_default_dtype(torch.float64)

POST = "i feel worried about my job and my boss every day"


class TestProviders:
    def test_arity(self):
        bundle = generate_states(TemplateStateProvider(), POST)
        for rel in RELATIONS:
            assert len(bundle.states[rel]) == 5

    def test_relation_set(self):
        assert set(RELATIONS) == {"intent", "need", "effect", "want"}

    def test_deterministic(self):
        provider = TemplateStateProvider()
        assert generate_states(provider, POST) == generate_states(provider, POST)

    def test_empty_post_rejected(self):
        with pytest.raises(CognitionError):
            generate_states(TemplateStateProvider(), "")

    def test_bundle_validation(self):
        with pytest.raises(CognitionError):
            CognitiveBundle(states={"want": ("a",) * 5})

    def test_no_partial_bundle_on_failure(self):
        class Broken(TemplateStateProvider):
            def generate(self, post):
                raise RuntimeError("backend down")

        with pytest.raises(CognitionError, match="generation failed"):
            generate_states(Broken(), POST)

    def test_file_provider(self, tmp_path):
        bundle = TemplateStateProvider().generate(POST)
        path = tmp_path / "states.json"
        path.write_text(json.dumps({post_hash(POST): {r: list(bundle.states[r]) for r in RELATIONS}}))
        loaded = FileStateProvider(path).generate(POST)
        assert loaded == bundle
        with pytest.raises(CognitionError, match="no precomputed"):
            FileStateProvider(path).generate("some other post entirely")


def make_stack(d=8, heads=2, seed=0):
    torch.manual_seed(seed)
    enc = CognitiveEncoder(d, heads, ffn_mult=1).double()
    ref = CognitiveRefiner(d, heads, ffn_mult=1).double()
    sel = CognitiveSelector(d).double()
    return enc, ref, sel


class TestStackShapes:
    def test_encoder_summary_is_first_row(self):
        enc, _, _ = make_stack()
        states = torch.randn(12, 8, dtype=torch.float64)
        hidden, summary = enc(states)
        assert hidden.shape == (13, 8)
        assert torch.equal(summary, hidden[0])

    def test_refiner_output_width_2d(self):
        _, ref, _ = make_stack()
        out = ref(torch.randn(10, 8, dtype=torch.float64), torch.randn(8, dtype=torch.float64))
        assert out.shape == (10, 16)

    def test_selector_output_width_d(self):
        _, _, sel = make_stack()
        out = sel(torch.randn(10, 16, dtype=torch.float64))
        assert out.shape == (10, 8)

    def test_refiner_zero_summary_right_half_zero(self):
        d = 8
        ctx = torch.randn(5, d, dtype=torch.float64)
        merged = torch.cat([ctx, torch.zeros(d).unsqueeze(0).expand(5, -1)], dim=1)
        assert torch.all(merged[:, d:] == 0)

    def test_refiner_width_mismatch(self):
        _, ref, _ = make_stack()
        with pytest.raises(CognitionError):
            ref(torch.randn(4, 6, dtype=torch.float64), torch.randn(8, dtype=torch.float64))


class TestGatingContract:
    def test_zero_maps_to_zero(self):
        x = torch.zeros(3, 4, dtype=torch.float64)
        assert torch.all(torch.sigmoid(x) * x == 0)

    def test_gate_shrinks_magnitude(self):
        x = torch.randn(50, 6, dtype=torch.float64)
        gated = torch.sigmoid(x) * x
        nonzero = x != 0
        assert torch.all(gated[nonzero].abs() < x[nonzero].abs())


def stack_loss(enc, ref, sel, states, ctx):
    _, summary = enc(states)
    refined = ref(ctx, summary)
    return sel(refined).pow(2).sum()


def test_stack_gradients_match_finite_differences():
    enc, ref, sel = make_stack(seed=3)
    states = torch.randn(6, 8, dtype=torch.float64)
    ctx = torch.randn(4, 8, dtype=torch.float64)
    params = [p for m in (enc, ref, sel) for p in m.parameters()]

    loss = stack_loss(enc, ref, sel, states, ctx)
    loss.backward()

    eps = 1e-6
    max_rel = 0.0
    for p in params:
        grad = p.grad
        flat = p.data.view(-1)
        # Sample a handful of coordinates per tensor to keep runtime small.
        idx = torch.randperm(flat.numel(), generator=torch.Generator().manual_seed(0))[:4]
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + eps
            f_plus = stack_loss(enc, ref, sel, states, ctx).item()
            flat[i] = orig - eps
            f_minus = stack_loss(enc, ref, sel, states, ctx).item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2 * eps)
            g = grad.view(-1)[i].item()
            rel = abs(g - fd) / max(1.0, abs(g) + abs(fd))
            max_rel = max(max_rel, rel)
    assert max_rel < 1e-4


def test_stack_deterministic():
    states = torch.randn(6, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    ctx = torch.randn(4, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(2))
    outs = []
    for _ in range(2):
        enc, ref, sel = make_stack(seed=11)
        _, summary = enc(states)
        outs.append(sel(ref(ctx, summary)))
    assert torch.equal(outs[0], outs[1])
