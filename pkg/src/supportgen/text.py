"""Vocabulary, word-level tokenization, and length capping.

Tokenization is lowercased whitespace-and-punctuation splitting, with the
reserved marker literals (strategy brackets, ``User:`` / ``System:``) kept as
single tokens so that strategy-prefixed passages round-trip through encoding.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import ALL_STRATEGIES, Dialogue

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"
CLS = "<cls>"
SEP_USER = "user:"
SEP_SYSTEM = "system:"

STRATEGY_TOKENS = tuple(s.token.lower() for s in ALL_STRATEGIES)

RESERVED_TOKENS = (PAD, BOS, EOS, UNK, CLS, SEP_USER, SEP_SYSTEM) + STRATEGY_TOKENS

# Marker literals matched before the generic word/punctuation rules.
_MARKER_LITERALS = STRATEGY_TOKENS + (SEP_USER, SEP_SYSTEM)
_TOKEN_RE = re.compile(
    "|".join(re.escape(m) for m in _MARKER_LITERALS) + r"|[\w']+|[^\w\s]"
)


class VocabularyError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split into words, punctuation, and reserved markers."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


class Vocabulary:
    """Immutable token <-> id bijection with reserved ids in the lowest range."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise VocabularyError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise VocabularyError("duplicate tokens in vocabulary")
        self._tokens = tuple(tokens)
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    @property
    def unk_id(self) -> int:
        return self._ids[UNK]

    @property
    def cls_id(self) -> int:
        return self._ids[CLS]

    @property
    def strategy_ids(self) -> tuple[int, ...]:
        """Ids of the eight strategy marker tokens, in strategy-id order."""
        return tuple(self._ids[t] for t in STRATEGY_TOKENS)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, self._ids[UNK])

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._tokens):
            raise VocabularyError(f"token id out of range: {idx}")
        return self._tokens[idx]

    def content_hash(self) -> str:
        payload = json.dumps(list(self._tokens), ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps({"tokens": list(self._tokens)}, ensure_ascii=False), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["tokens"])


def build_vocab(train: list[Dialogue], min_count: int = 1) -> Vocabulary:
    """Count word tokens over dialogue text and keep those with count >= min_count."""
    if min_count < 1:
        raise VocabularyError(f"min_count must be >= 1, got {min_count}")
    if not train:
        raise VocabularyError("cannot build a vocabulary from an empty corpus")
    counts: Counter[str] = Counter()
    for d in train:
        counts.update(tokenize(d.persona))
        counts.update(tokenize(d.situation))
        for turn in d.turns:
            counts.update(tokenize(turn.text))
    kept = sorted(
        tok for tok, c in counts.items() if c >= min_count and tok not in RESERVED_TOKENS
    )
    return Vocabulary(list(RESERVED_TOKENS) + kept)


def encode(text: str, vocab: Vocabulary, cap: int | None = None, keep: str = "head") -> TokenSeq:
    """Tokenize and map to ids, truncating to ``cap`` tokens.

    ``keep="head"`` keeps the earliest tokens (demonstrations are templates read
    left to right); ``keep="tail"`` keeps the latest (recent dialogue turns
    matter most).
    """
    if cap is not None and cap < 1:
        raise VocabularyError(f"cap must be >= 1, got {cap}")
    ids = [vocab.id_of(tok) for tok in tokenize(text)]
    if cap is not None and len(ids) > cap:
        ids = ids[:cap] if keep == "head" else ids[-cap:]
    return TokenSeq(tuple(ids))


def truncate_to_tokens(text: str, cap: int) -> str:
    """Cut the original-case string after its first ``cap`` tokens."""
    matches = list(_TOKEN_RE.finditer(text.lower()))
    if len(matches) <= cap:
        return text
    return text[: matches[cap - 1].end()]


def decode(seq: TokenSeq, vocab: Vocabulary) -> str:
    """Join tokens with single spaces, dropping PAD/BOS/EOS."""
    special = {vocab.pad_id, vocab.bos_id, vocab.eos_id}
    return " ".join(vocab.token_of(i) for i in seq if i not in special)
