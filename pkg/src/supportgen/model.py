"""Encoder-decoder with dual cross-attention knowledge fusion.

The three hidden sources (dialogue context, retrieved demonstrations,
cognitive states) are aligned through raw cross-attention in both directions,
combined by a softmax-weighted sum with trainable logits, normalized, and fed
to an autoregressive decoder as cross-attention memory.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .cognition import (
    RELATIONS,
    CognitiveBundle,
    CognitiveEncoder,
    CognitiveRefiner,
    CognitiveSelector,
)
from .layers import DecoderBlock, TextEncoder, sinusoidal_positions
from .text import TokenSeq, Vocabulary, encode

CHECKPOINT_VERSION = 1


class ModelError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    d: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    cog_layers: int = 1
    ffn_mult: int = 4
    max_enc_len: int = 512
    max_dec_len: int = 50
    variant: str = "base"  # "base" | "with_norm"
    tie_encoders: bool = True
    cog_state_cap: int = 32  # per-relation token cap for encoded cognitive states

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ModelError(f"d={self.d} must be divisible by heads={self.heads}")
        if self.max_enc_len < 1 or self.max_dec_len < 1:
            raise ModelError("max lengths must be positive")
        if self.variant not in ("base", "with_norm"):
            raise ModelError(f"unknown variant {self.variant!r}")


@dataclass
class SamplerConfig:
    top_k: int = 10
    top_p: float = 0.9
    repetition_penalty: float = 1.03
    seed: int = 0

    def __post_init__(self):
        if self.top_k < 1:
            raise ModelError("top_k must be >= 1")
        if not 0.0 < self.top_p <= 1.0:
            raise ModelError("top_p must be in (0, 1]")
        if self.repetition_penalty < 1.0:
            raise ModelError("repetition penalty must be >= 1")


def cross_attend(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """softmax(a @ b.T) @ b with the softmax over the rows of b."""
    if a.shape[1] != b.shape[1]:
        raise ModelError(f"width mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return F.softmax(a @ b.T, dim=-1) @ b


class SupportModel(nn.Module):
    """Full context + demonstrations + cognition fusion model."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary):
        super().__init__()
        if config.vocab_size != len(vocab):
            raise ModelError(
                f"config vocab_size {config.vocab_size} != vocabulary size {len(vocab)}"
            )
        self.config = config
        self.vocab = vocab
        d, heads = config.d, config.heads

        def make_encoder():
            return TextEncoder(
                config.vocab_size, d, heads, config.enc_layers,
                config.max_enc_len, vocab.pad_id, config.ffn_mult,
            )

        self.encoder = make_encoder()
        if config.tie_encoders:
            self.demo_encoder = self.encoder
            self.state_encoder = self.encoder
        else:
            self.demo_encoder = make_encoder()
            self.state_encoder = make_encoder()

        self.cog_encoder = CognitiveEncoder(d, heads, config.cog_layers, config.ffn_mult)
        self.cog_refiner = CognitiveRefiner(d, heads, config.cog_layers, config.ffn_mult)
        self.cog_selector = CognitiveSelector(d)

        self.ln_pd = nn.LayerNorm(d)
        self.ln_cd = nn.LayerNorm(d)
        self.ln_dp = nn.LayerNorm(d)
        self.ln_dc = nn.LayerNorm(d)
        self.fusion_logits = nn.Parameter(torch.zeros(5))  # equal init -> uniform weights
        self.ln_fin = nn.LayerNorm(d)

        self.register_buffer("dec_positions", sinusoidal_positions(config.max_dec_len, d))
        self.dec_blocks = nn.ModuleList(
            DecoderBlock(d, heads, config.ffn_mult) for _ in range(config.dec_layers)
        )
        self.out_proj = nn.Linear(d, config.vocab_size)
        self.double()

    # ---------------------------------------------------------------- encoding

    def encode_context(self, ctx_ids: TokenSeq, trace: Optional[list[str]] = None) -> torch.Tensor:
        if len(ctx_ids) > self.config.max_enc_len:
            raise ModelError(f"context length {len(ctx_ids)} exceeds {self.config.max_enc_len}")
        if trace is not None:
            trace.append("encode")
        return self.encoder(torch.tensor(ctx_ids.ids, dtype=torch.long))

    def encode_demonstrations(self, demo_ids: TokenSeq) -> torch.Tensor:
        if len(demo_ids) == 0:
            # No retrieved demonstrations: a single zero row keeps shapes valid.
            return torch.zeros(1, self.config.d, dtype=torch.float64)
        return self.demo_encoder(torch.tensor(demo_ids.ids, dtype=torch.long))

    def encode_states(self, bundle: CognitiveBundle) -> torch.Tensor:
        """Encode each relation's joined states and concatenate on the sequence axis."""
        parts = []
        for rel in RELATIONS:
            seq = encode(bundle.joined(rel), self.vocab, cap=self.config.cog_state_cap)
            parts.append(self.state_encoder(torch.tensor(seq.ids, dtype=torch.long)))
        return torch.cat(parts, dim=0)

    def cognition_stack(
        self, ctx_enc: torch.Tensor, states_enc: torch.Tensor, trace: Optional[list[str]] = None
    ) -> torch.Tensor:
        """Encoder -> refiner -> gate/MLP; returns H_C aligned to the context rows."""
        _, summary = self.cog_encoder(states_enc)
        if trace is not None:
            trace.append("cognition.enc_enc")
        refined = self.cog_refiner(ctx_enc, summary)
        if trace is not None:
            trace.append("cognition.enc_ref")
        selected = self.cog_selector(refined)
        if trace is not None:
            trace.append("cognition.select")
        return selected

    # ------------------------------------------------------------------ fusion

    def align(
        self, ctx_enc: torch.Tensor, demo_enc: torch.Tensor, cog_enc: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """Bidirectional residual cross-attention; all outputs share the context length."""
        h_pd = self.ln_pd(ctx_enc + cross_attend(ctx_enc, demo_enc))
        h_cd = self.ln_cd(ctx_enc + cross_attend(ctx_enc, cog_enc))
        # Knowledge-side alignment is pooled back onto the context positions so
        # every aggregation term has the same row count.
        h_dp = cross_attend(ctx_enc, self.ln_dp(demo_enc + cross_attend(demo_enc, ctx_enc)))
        h_dc = cross_attend(ctx_enc, self.ln_dc(cog_enc + cross_attend(cog_enc, ctx_enc)))
        return h_pd, h_cd, h_dp, h_dc

    def fusion_weights(self) -> torch.Tensor:
        return F.softmax(self.fusion_logits, dim=0)

    def fuse(
        self,
        ctx_enc: torch.Tensor,
        aligned: tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor],
        trace: Optional[list[str]] = None,
    ) -> torch.Tensor:
        terms = (ctx_enc,) + tuple(aligned)
        if len({t.shape for t in terms}) != 1:
            raise ModelError(f"fusion terms disagree in shape: {[tuple(t.shape) for t in terms]}")
        if self.config.variant == "with_norm":
            terms = tuple(F.layer_norm(t, t.shape[-1:]) for t in terms)
        lam = self.fusion_weights()
        fused = sum(lam[i] * terms[i] for i in range(5))
        if trace is not None:
            trace.append("fusion")
        out = self.ln_fin(fused)
        if trace is not None:
            trace.append("layer_norm")
        return out

    def forward_fusion(
        self,
        ctx_ids: TokenSeq,
        demo_ids: TokenSeq,
        bundle: CognitiveBundle,
        trace: Optional[list[str]] = None,
    ) -> torch.Tensor:
        """Full path from token ids to the fused decoder memory."""
        ctx_enc = self.encode_context(ctx_ids, trace=trace)
        demo_enc = self.encode_demonstrations(demo_ids)
        states_enc = self.encode_states(bundle)
        cog_enc = self.cognition_stack(ctx_enc, states_enc, trace=trace)
        aligned = self.align(ctx_enc, demo_enc, cog_enc)
        if trace is not None:
            trace.append("cross_attention")
        return self.fuse(ctx_enc, aligned, trace=trace)

    # ---------------------------------------------------------------- decoding

    def decoder_logits(self, prefix_ids: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        """Logits for every position of the prefix, shape [len(prefix), vocab]."""
        n = prefix_ids.shape[0]
        if n > self.config.max_dec_len:
            raise ModelError(f"decoder prefix length {n} exceeds {self.config.max_dec_len}")
        x = self.encoder.embedding(prefix_ids) * math.sqrt(self.config.d) + self.dec_positions[:n]
        for block in self.dec_blocks:
            x = block(x, memory)
        return self.out_proj(x)

    def decode_step(self, prefix: TokenSeq, memory: torch.Tensor) -> torch.Tensor:
        """Next-token distribution given the generated prefix."""
        if len(prefix) >= self.config.max_dec_len:
            raise ModelError("decoder prefix already at maximum length")
        ids = torch.tensor((self.vocab.bos_id,) + tuple(prefix.ids), dtype=torch.long)
        logits = self.decoder_logits(ids, memory)
        return F.softmax(logits[-1], dim=-1)

    def target_logprobs(
        self, target: TokenSeq, memory: torch.Tensor, trace: Optional[list[str]] = None
    ) -> torch.Tensor:
        """Teacher-forced log-probabilities for each target token, [n, vocab]."""
        if len(target) > self.config.max_dec_len:
            raise ModelError(f"target length {len(target)} exceeds {self.config.max_dec_len}")
        inp = torch.tensor((self.vocab.bos_id,) + tuple(target.ids[:-1]), dtype=torch.long)
        logits = self.decoder_logits(inp, memory)
        if trace is not None:
            trace.append("decode")
        return F.log_softmax(logits, dim=-1)

    @torch.no_grad()
    def sample_response(self, memory: torch.Tensor, cfg: SamplerConfig) -> TokenSeq:
        """Top-k / nucleus sampling with repetition penalty; strategy token first."""
        gen = torch.Generator().manual_seed(cfg.seed)
        strategy_ids = self.vocab.strategy_ids
        out: list[int] = []
        while len(out) < self.config.max_dec_len:
            probs = self.decode_step(TokenSeq(tuple(out)), memory)
            logits = torch.log(probs.clamp_min(1e-300))
            if out:
                seen = torch.tensor(sorted(set(out)), dtype=torch.long)
                penalized = logits[seen]
                logits[seen] = torch.where(
                    penalized > 0,
                    penalized / cfg.repetition_penalty,
                    penalized * cfg.repetition_penalty,
                )
            if not out:
                # Responses open with one of the eight strategy markers.
                mask = torch.full_like(logits, float("-inf"))
                mask[list(strategy_ids)] = logits[list(strategy_ids)]
                logits = mask
            next_id = _sample_token(logits, cfg, gen)
            if next_id == self.vocab.eos_id:
                break
            out.append(next_id)
        return TokenSeq(tuple(out))

    @torch.no_grad()
    def predict_strategy(self, memory: torch.Tensor, n: int = 1) -> list[int]:
        """Rank the eight strategy ids by first-token probability, best first."""
        if not 1 <= n <= 8:
            raise ModelError(f"n must be in [1, 8], got {n}")
        probs = self.decode_step(TokenSeq(()), memory)
        strategy_ids = self.vocab.strategy_ids
        ranked = sorted(range(8), key=lambda k: (-float(probs[strategy_ids[k]]), k))
        return ranked[:n]

    # ------------------------------------------------------------- persistence

    def save_checkpoint(self, path: str | Path) -> None:
        torch.save(
            {
                "format_version": CHECKPOINT_VERSION,
                "config": asdict(self.config),
                "vocab_hash": self.vocab.content_hash(),
                "state_dict": self.state_dict(),
            },
            path,
        )


def _sample_token(logits: torch.Tensor, cfg: SamplerConfig, gen: torch.Generator) -> int:
    """Apply top-k then nucleus filtering and sample one token id."""
    k = min(cfg.top_k, logits.shape[0])
    top_vals, top_idx = torch.topk(logits, k)
    probs = F.softmax(top_vals, dim=-1)
    order = torch.argsort(probs, descending=True, stable=True)
    sorted_probs = probs[order]
    cum = torch.cumsum(sorted_probs, dim=0)
    # Minimal prefix of the sorted distribution with cumulative mass >= top_p.
    cutoff = int(torch.searchsorted(cum, torch.tensor(cfg.top_p, dtype=cum.dtype)).item())
    cutoff = min(cutoff, sorted_probs.shape[0] - 1)
    kept = sorted_probs[: cutoff + 1]
    kept = kept / kept.sum()
    choice = int(torch.multinomial(kept, 1, generator=gen).item())
    return int(top_idx[order[choice]].item())


def load_checkpoint(path: str | Path, vocab: Vocabulary) -> SupportModel:
    payload = torch.load(path, weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ModelError(f"unsupported checkpoint version: {payload.get('format_version')}")
    if payload["vocab_hash"] != vocab.content_hash():
        raise ModelError("checkpoint was trained with a different vocabulary")
    model = SupportModel(ModelConfig(**payload["config"]), vocab)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
