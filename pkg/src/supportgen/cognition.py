"""Cognitive-state generation and the encoder / refiner / selector stack.

A :class:`CognitiveStateProvider` turns a seeker post into four lists of five
textual states (one list per relation: intent, need, effect, want). The
neural stack then encodes the concatenated states, summarizes them through a
CLS position, merges the summary into every context token, and gates the
result down to the model width.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import EncoderBlock

RELATIONS = ("intent", "need", "effect", "want")

STATES_PER_RELATION = 5

# Each relation gets five phrasing variants; {kw} is filled with a salient
# phrase extracted from the post.
_TEMPLATES = {
    "intent": (
        "seeker intends to talk about {kw}",
        "seeker means to address {kw}",
        "seeker aims to work through {kw}",
        "seeker plans to deal with {kw}",
        "seeker intends to understand {kw}",
    ),
    "need": (
        "seeker needs support with {kw}",
        "seeker needs someone to hear about {kw}",
        "seeker requires help facing {kw}",
        "seeker needs reassurance about {kw}",
        "seeker needs guidance on {kw}",
    ),
    "effect": (
        "seeker feels weighed down by {kw}",
        "seeker becomes anxious about {kw}",
        "seeker gets distressed over {kw}",
        "seeker feels stuck because of {kw}",
        "seeker grows tired from {kw}",
    ),
    "want": (
        "seeker wants relief from {kw}",
        "seeker wants to move past {kw}",
        "seeker wants advice about {kw}",
        "seeker wants comfort regarding {kw}",
        "seeker wants a way out of {kw}",
    ),
}

_STOPWORDS = frozenset(
    "a an the i my me we you he she it they is am are was were be been to of in on at "
    "for with and or but not no so do did have has had this that".split()
)

_WORD_RE = re.compile(r"[\w']+")


class CognitionError(RuntimeError):
    pass


@dataclass(frozen=True)
class CognitiveBundle:
    """Five textual states per relation, in fixed relation order."""

    states: dict[str, tuple[str, ...]]

    def __post_init__(self):
        if set(self.states) != set(RELATIONS):
            raise CognitionError(f"bundle relations must be {RELATIONS}, got {set(self.states)}")
        for rel, items in self.states.items():
            if len(items) != STATES_PER_RELATION or any(not s for s in items):
                raise CognitionError(f"relation {rel!r} must have {STATES_PER_RELATION} non-empty states")

    def joined(self, relation: str) -> str:
        """The space-joined state sequence for one relation."""
        return " ".join(self.states[relation])


class CognitiveStateProvider:
    """Abstract deterministic post -> CognitiveBundle generator."""

    def generate(self, post: str) -> CognitiveBundle:
        raise NotImplementedError


class TemplateStateProvider(CognitiveStateProvider):
    """Keyword-extraction provider: TF-ranked salient words slotted into templates."""

    def __init__(self, keywords: int = 2):
        self.keywords = keywords

    def _salient_phrase(self, post: str) -> str:
        words = [w for w in _WORD_RE.findall(post.lower()) if w not in _STOPWORDS]
        if not words:
            words = _WORD_RE.findall(post.lower()) or ["this"]
        counts = Counter(words)
        first_pos = {w: i for i, w in reversed(list(enumerate(words)))}
        ranked = sorted(counts, key=lambda w: (-counts[w], first_pos[w]))
        chosen = sorted(ranked[: self.keywords], key=lambda w: first_pos[w])
        return " ".join(chosen)

    def generate(self, post: str) -> CognitiveBundle:
        if not post:
            raise CognitionError("post must be non-empty")
        kw = self._salient_phrase(post)
        return CognitiveBundle(
            states={rel: tuple(t.format(kw=kw) for t in _TEMPLATES[rel]) for rel in RELATIONS}
        )


def post_hash(post: str) -> str:
    """Key for precomputed-state files: sha1 of the whitespace-normalized post."""
    return hashlib.sha1(" ".join(post.split()).encode("utf-8")).hexdigest()


class FileStateProvider(CognitiveStateProvider):
    """Precomputed states loaded from a JSON map ``post_hash -> {relation: [5 str]}``."""

    def __init__(self, path: str | Path, fallback: CognitiveStateProvider | None = None):
        self.table = json.loads(Path(path).read_text(encoding="utf-8"))
        self.fallback = fallback

    def generate(self, post: str) -> CognitiveBundle:
        entry = self.table.get(post_hash(post))
        if entry is None:
            if self.fallback is not None:
                return self.fallback.generate(post)
            raise CognitionError(f"no precomputed states for post hash {post_hash(post)}")
        return CognitiveBundle(states={rel: tuple(entry[rel]) for rel in RELATIONS})


def generate_states(provider: CognitiveStateProvider, post: str) -> CognitiveBundle:
    """Run the provider, surfacing any failure as a CognitionError."""
    if not post:
        raise CognitionError("post must be non-empty")
    try:
        return provider.generate(post)
    except CognitionError:
        raise
    except Exception as exc:
        raise CognitionError(f"cognitive-state generation failed: {exc}") from exc


class CognitiveEncoder(nn.Module):
    """Summarize the concatenated state encodings through a prepended CLS row."""

    def __init__(self, d: int, heads: int, layers: int = 1, ffn_mult: int = 4):
        super().__init__()
        self.cls = nn.Parameter(torch.zeros(1, d))
        nn.init.normal_(self.cls, std=0.02)
        self.blocks = nn.ModuleList(EncoderBlock(d, heads, ffn_mult) for _ in range(layers))

    def forward(self, states_enc: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x = torch.cat([self.cls, states_enc], dim=0)
        for block in self.blocks:
            x = block(x)
        return x, x[0]


class CognitiveRefiner(nn.Module):
    """Broadcast the CLS summary onto every context token and re-encode at width 2d."""

    def __init__(self, d: int, heads: int, layers: int = 1, ffn_mult: int = 4):
        super().__init__()
        self.d = d
        self.blocks = nn.ModuleList(EncoderBlock(2 * d, heads, ffn_mult) for _ in range(layers))

    def forward(self, ctx_enc: torch.Tensor, summary: torch.Tensor) -> torch.Tensor:
        if ctx_enc.shape[1] != self.d or summary.shape[0] != self.d:
            raise CognitionError(
                f"width mismatch: context {tuple(ctx_enc.shape)}, summary {tuple(summary.shape)}, d={self.d}"
            )
        merged = torch.cat([ctx_enc, summary.unsqueeze(0).expand(ctx_enc.shape[0], -1)], dim=1)
        x = merged
        for block in self.blocks:
            x = block(x)
        return x


class CognitiveSelector(nn.Module):
    """Sigmoid self-gate followed by a one-hidden-layer ReLU MLP down to width d."""

    def __init__(self, d: int):
        super().__init__()
        self.fc1 = nn.Linear(2 * d, 2 * d)
        self.fc2 = nn.Linear(2 * d, d)

    def forward(self, refined: torch.Tensor) -> torch.Tensor:
        gated = torch.sigmoid(refined) * refined
        return self.fc2(F.relu(self.fc1(gated)))
