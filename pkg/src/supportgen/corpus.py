"""Dialogue corpus ingestion, splitting, and retrieval-base construction.

The corpus file is a JSON array of dialogue objects::

    {"id": str, "persona": str, "situation": str,
     "turns": [{"speaker": "seeker"|"supporter", "text": str, "strategy": str?}]}

Consecutive same-speaker turns are merged on load so that each dialogue is a
clean alternation of seeker posts and supporter responses.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

logger = logging.getLogger(__name__)

STRATEGY_NAMES = (
    "Question",
    "Restatement or Paraphrasing",
    "Reflection of Feelings",
    "Self-disclosure",
    "Affirmation and Reassurance",
    "Providing Suggestions",
    "Information",
    "Others",
)

_STRATEGY_BY_KEY = {name.strip().lower(): i for i, name in enumerate(STRATEGY_NAMES)}


class CorpusError(ValueError):
    """Raised for malformed corpus files or invalid dialogue structure."""


@dataclass(frozen=True)
class Strategy:
    """One of the eight supporter response strategies."""

    id: int
    name: str

    def __post_init__(self):
        if not (0 <= self.id < len(STRATEGY_NAMES)) or STRATEGY_NAMES[self.id] != self.name:
            raise CorpusError(f"invalid strategy id/name pair: {self.id}/{self.name!r}")

    @classmethod
    def from_name(cls, name: str) -> "Strategy":
        key = name.strip().lower()
        if key not in _STRATEGY_BY_KEY:
            raise CorpusError(f"unknown strategy name: {name!r}")
        sid = _STRATEGY_BY_KEY[key]
        return cls(id=sid, name=STRATEGY_NAMES[sid])

    @classmethod
    def from_id(cls, sid: int) -> "Strategy":
        if not 0 <= sid < len(STRATEGY_NAMES):
            raise CorpusError(f"strategy id out of range: {sid}")
        return cls(id=sid, name=STRATEGY_NAMES[sid])

    @property
    def token(self) -> str:
        """The bracketed marker used to prefix passages, e.g. ``[Question]``."""
        return f"[{self.name}]"


ALL_STRATEGIES = tuple(Strategy.from_id(i) for i in range(len(STRATEGY_NAMES)))


@dataclass(frozen=True)
class Turn:
    speaker: str  # "seeker" | "supporter"
    text: str
    strategy: Optional[Strategy] = None

    def __post_init__(self):
        if self.speaker not in ("seeker", "supporter"):
            raise CorpusError(f"unknown speaker: {self.speaker!r}")
        if self.speaker == "supporter" and self.strategy is None:
            raise CorpusError("supporter turn without a strategy")
        if self.speaker == "seeker" and self.strategy is not None:
            raise CorpusError("seeker turn must not carry a strategy")


@dataclass(frozen=True)
class Dialogue:
    id: str
    persona: str
    situation: str
    turns: tuple[Turn, ...]

    def __post_init__(self):
        if not self.turns:
            raise CorpusError(f"dialogue {self.id!r} has no turns")


@dataclass(frozen=True)
class RetrievalPassage:
    """A strategy-prefixed supporter response paired with the seeker post before it."""

    passage_id: int
    strategy_text: str
    response_text: str
    query_text: str
    source_dialogue_id: str

    @property
    def text(self) -> str:
        return f"{self.strategy_text} {self.response_text}"


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    valid_fraction: float = 0.1
    test_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        total = self.train_fraction + self.valid_fraction + self.test_fraction
        if abs(total - 1.0) > 1e-9:
            raise CorpusError(f"split fractions must sum to 1, got {total}")


def _merge_turns(raw_turns: list[dict], dialogue_id: str) -> tuple[Turn, ...]:
    """Merge consecutive same-speaker turns with a single space."""
    merged: list[Turn] = []
    for k, raw in enumerate(raw_turns):
        where = f"dialogue {dialogue_id!r}, turn {k}"
        if not isinstance(raw, dict) or "speaker" not in raw or "text" not in raw:
            raise CorpusError(f"{where}: turn must have 'speaker' and 'text'")
        speaker = raw["speaker"]
        text = raw["text"]
        strategy = None
        if speaker == "supporter":
            if not raw.get("strategy"):
                raise CorpusError(f"{where}: supporter turn missing strategy")
            strategy = Strategy.from_name(raw["strategy"])
        elif speaker == "seeker":
            if raw.get("strategy"):
                raise CorpusError(f"{where}: seeker turn must not carry a strategy")
        else:
            raise CorpusError(f"{where}: unknown speaker {speaker!r}")

        if merged and merged[-1].speaker == speaker:
            prev = merged[-1]
            # Keep the first strategy when supporter turns merge.
            merged[-1] = Turn(speaker=speaker, text=f"{prev.text} {text}", strategy=prev.strategy)
        else:
            merged.append(Turn(speaker=speaker, text=text, strategy=strategy))
    return tuple(merged)


def load_corpus(path: str | Path) -> list[Dialogue]:
    """Load and validate a corpus file, merging consecutive same-speaker turns."""
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(data, list):
        raise CorpusError(f"{path}: corpus must be a JSON array")

    dialogues = []
    for i, rec in enumerate(data):
        if not isinstance(rec, dict) or "id" not in rec or "turns" not in rec:
            raise CorpusError(f"{path}: record {i} must be an object with 'id' and 'turns'")
        dialogues.append(
            Dialogue(
                id=str(rec["id"]),
                persona=rec.get("persona") or "",
                situation=rec.get("situation") or "",
                turns=_merge_turns(rec["turns"], str(rec["id"])),
            )
        )
    return dialogues


def dialogue_to_dict(d: Dialogue) -> dict:
    return {
        "id": d.id,
        "persona": d.persona,
        "situation": d.situation,
        "turns": [
            {"speaker": t.speaker, "text": t.text}
            if t.strategy is None
            else {"speaker": t.speaker, "text": t.text, "strategy": t.strategy.name}
            for t in d.turns
        ],
    }


def save_corpus(dialogues: list[Dialogue], path: str | Path) -> None:
    path = Path(path)
    path.write_text(
        json.dumps([dialogue_to_dict(d) for d in dialogues], indent=1, ensure_ascii=False),
        encoding="utf-8",
    )


def split_corpus(
    dialogues: list[Dialogue], spec: SplitSpec
) -> tuple[list[Dialogue], list[Dialogue], list[Dialogue]]:
    """Deterministic dialogue-level split; floor-sized valid/test, remainder to train."""
    n = len(dialogues)
    if n < 10:
        raise CorpusError(f"need at least 10 dialogues to split, got {n}")
    n_valid = int(n * spec.valid_fraction)
    n_test = int(n * spec.test_fraction)
    order = list(range(n))
    random.Random(spec.seed).shuffle(order)
    valid = [dialogues[i] for i in order[:n_valid]]
    test = [dialogues[i] for i in order[n_valid : n_valid + n_test]]
    train = [dialogues[i] for i in order[n_valid + n_test :]]
    return train, valid, test


def build_retrieval_base(train: list[Dialogue]) -> list[RetrievalPassage]:
    """One passage per supporter turn that has a preceding seeker post.

    Supporter turns opening a dialogue have no query and are skipped; the
    skip count is logged.
    """
    passages: list[RetrievalPassage] = []
    skipped = 0
    for d in train:
        prev_seeker: Optional[str] = None
        for turn in d.turns:
            if turn.speaker == "seeker":
                prev_seeker = turn.text
            else:
                if prev_seeker is None:
                    skipped += 1
                    continue
                passages.append(
                    RetrievalPassage(
                        passage_id=len(passages),
                        strategy_text=turn.strategy.token,
                        response_text=turn.text,
                        query_text=prev_seeker,
                        source_dialogue_id=d.id,
                    )
                )
    if skipped:
        logger.info("skipped %d supporter turns without a preceding seeker post", skipped)
    return passages


def save_retrieval_base(passages: list[RetrievalPassage], path: str | Path) -> None:
    records = [
        {
            "passage_id": p.passage_id,
            "strategy_text": p.strategy_text,
            "response_text": p.response_text,
            "query_text": p.query_text,
            "source_dialogue_id": p.source_dialogue_id,
        }
        for p in passages
    ]
    Path(path).write_text(json.dumps(records, indent=1, ensure_ascii=False), encoding="utf-8")


def load_retrieval_base(path: str | Path) -> list[RetrievalPassage]:
    records = json.loads(Path(path).read_text(encoding="utf-8"))
    return [RetrievalPassage(**rec) for rec in records]
