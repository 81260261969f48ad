"""Dynamic demonstration selection: dense scoring, top-s search, assembly.

Queries and passages are embedded by an :class:`EmbeddingProvider`; relevance
is the raw inner product between the two vectors. Search is an exact
exhaustive scan (desk-scale bases are thousands of rows).
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import RetrievalPassage
from .text import Vocabulary, encode, tokenize, truncate_to_tokens

logger = logging.getLogger(__name__)

_INDEX_MAGIC = b"SGIDX001"


class RetrievalError(ValueError):
    pass


class EmbeddingProvider:
    """Deterministic text -> vector scorer with separate query/passage entry points."""

    dim: int

    def embed_query(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def embed_passage(self, text: str) -> np.ndarray:
        raise NotImplementedError


class HashedBowEmbedder(EmbeddingProvider):
    """Feature-hashed bag-of-words with TF weighting, L2-normalized.

    Hashing uses a stable digest so vectors are identical across processes.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim
        self._bucket_cache: dict[str, int] = {}

    def _bucket(self, token: str) -> int:
        b = self._bucket_cache.get(token)
        if b is None:
            digest = hashlib.md5(token.encode("utf-8")).digest()
            b = int.from_bytes(digest[:8], "big") % self.dim
            self._bucket_cache[token] = b
        return b

    def _embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokenize(text):
            vec[self._bucket(tok)] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def embed_query(self, text: str) -> np.ndarray:
        return self._embed(text)

    def embed_passage(self, text: str) -> np.ndarray:
        return self._embed(text)


@dataclass(frozen=True)
class Demonstration:
    """A retrieved exemplar rendered as ``User: <query> System: <passage>``."""

    text: str
    passage_id: int
    score: float


def compose_query(post: str, persona: str) -> str:
    """Concatenate the seeker post with the persona text; persona may be empty."""
    if not post:
        raise RetrievalError("post must be non-empty")
    return f"{post} {persona}" if persona else post


def similarity(q_vec: np.ndarray, p_vec: np.ndarray) -> float:
    """Inner product of a query and passage vector."""
    if q_vec.shape != p_vec.shape:
        raise RetrievalError(f"dimension mismatch: {q_vec.shape} vs {p_vec.shape}")
    return float(np.dot(q_vec, p_vec))


def demonstration_text(query_text: str, passage_text: str) -> str:
    return f"User: {query_text} System: {passage_text}"


class RetrievalIndex:
    """Immutable matrix of passage vectors plus passage metadata."""

    def __init__(
        self,
        vectors: np.ndarray,
        passages: Sequence[RetrievalPassage],
        provider: EmbeddingProvider,
    ):
        if vectors.shape[0] != len(passages):
            raise RetrievalError("row count must equal passage count")
        self.vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        self.vectors.setflags(write=False)
        self.passages = tuple(passages)
        self.provider = provider

    def __len__(self) -> int:
        return len(self.passages)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def build(
        cls, passages: Sequence[RetrievalPassage], provider: EmbeddingProvider
    ) -> "RetrievalIndex":
        if not passages:
            raise RetrievalError("cannot build an index from an empty passage list")
        vectors = np.stack([provider.embed_passage(p.text) for p in passages])
        return cls(vectors, passages, provider)

    def save(self, path: str | Path) -> None:
        meta = json.dumps(
            [
                {
                    "passage_id": p.passage_id,
                    "strategy_text": p.strategy_text,
                    "response_text": p.response_text,
                    "query_text": p.query_text,
                    "source_dialogue_id": p.source_dialogue_id,
                }
                for p in self.passages
            ],
            ensure_ascii=False,
        ).encode("utf-8")
        with Path(path).open("wb") as fh:
            fh.write(_INDEX_MAGIC)
            fh.write(struct.pack("<qq", self.dim, len(self)))
            fh.write(self.vectors.astype("<f8").tobytes())
            fh.write(meta)

    @classmethod
    def load(cls, path: str | Path, provider: Optional[EmbeddingProvider] = None) -> "RetrievalIndex":
        raw = Path(path).read_bytes()
        if raw[:8] != _INDEX_MAGIC:
            raise RetrievalError(f"{path}: not a retrieval index (bad magic)")
        dim, count = struct.unpack("<qq", raw[8:24])
        mat_end = 24 + dim * count * 8
        vectors = np.frombuffer(raw[24:mat_end], dtype="<f8").reshape(count, dim).copy()
        passages = [RetrievalPassage(**rec) for rec in json.loads(raw[mat_end:].decode("utf-8"))]
        return cls(vectors, passages, provider or HashedBowEmbedder(dim=dim))


def retrieve_top_s(
    index: RetrievalIndex,
    query: str,
    s: int = 3,
    exclude: Optional[set[int]] = None,
) -> list[Demonstration]:
    """Exact top-s passages by inner product, ties broken by lower passage id."""
    if s < 1:
        raise RetrievalError(f"s must be >= 1, got {s}")
    if len(index) == 0:
        raise RetrievalError("index is empty")
    exclude = exclude or set()
    q_vec = index.provider.embed_query(query)
    if q_vec.shape[0] != index.dim:
        raise RetrievalError(f"query dim {q_vec.shape[0]} != index dim {index.dim}")
    # Score row by row with the same kernel as similarity() so results are
    # bit-identical to a pairwise exhaustive scan, ties included.
    candidates = [
        (-similarity(q_vec, index.vectors[i]), p.passage_id, i)
        for i, p in enumerate(index.passages)
        if p.passage_id not in exclude
    ]
    candidates.sort()
    if s > len(candidates):
        logger.warning("requested top-%d but only %d passages available", s, len(candidates))
        s = len(candidates)
    out = []
    for neg, pid, i in candidates[:s]:
        p = index.passages[i]
        out.append(
            Demonstration(
                text=demonstration_text(p.query_text, p.text),
                passage_id=pid,
                score=float(-neg),
            )
        )
    return out


def assemble_demonstrations(
    demos: list[Demonstration], vocab: Vocabulary, cap: int = 512
) -> str:
    """Join demonstrations in score order, keeping the encoded length within cap.

    Whole trailing demonstrations are dropped first; a lone over-long
    demonstration is right-truncated at the token level.
    """
    if not demos:
        return ""
    kept = list(demos)
    while len(kept) > 1 and len(encode(" ".join(d.text for d in kept), vocab)) > cap:
        kept.pop()
    joined = " ".join(d.text for d in kept)
    return truncate_to_tokens(joined, cap)
