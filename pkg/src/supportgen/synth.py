"""Deterministic synthetic corpora for fixtures, demos, and overfit runs."""

from __future__ import annotations

import random

from .corpus import ALL_STRATEGIES, Dialogue, Turn

_TOPICS = (
    ("job", "work", "boss", "office", "deadline"),
    ("exam", "school", "grades", "teacher", "homework"),
    ("family", "parents", "brother", "home", "argument"),
    ("health", "doctor", "sleep", "pain", "hospital"),
    ("money", "rent", "bills", "debt", "savings"),
    ("friends", "party", "group", "loneliness", "trust"),
    ("move", "city", "apartment", "distance", "boxes"),
    ("pet", "dog", "vet", "walks", "company"),
    ("breakup", "partner", "messages", "memories", "closure"),
    ("travel", "flight", "visa", "plans", "delay"),
)

_FEELINGS = ("worried", "sad", "anxious", "overwhelmed", "tired", "scared", "upset", "lost")

_RESPONSE_STEMS = (
    "have you tried talking about the {w} with someone you trust",
    "it sounds like the {w} has been really hard for you",
    "i once struggled with my own {w} and it got better",
    "you are doing your best with the {w} and that matters",
    "maybe set one small goal about the {w} this week",
    "many people find the {w} difficult at first",
    "what part of the {w} worries you the most",
    "i hear how much the {w} weighs on you",
)


def make_synthetic_corpus(
    n_dialogues: int = 20, pairs_per_dialogue: int = 3, seed: int = 0
) -> list[Dialogue]:
    """Alternating seeker/supporter dialogues with strategy-labeled responses."""
    rng = random.Random(seed)
    dialogues = []
    for i in range(n_dialogues):
        topic = _TOPICS[i % len(_TOPICS)]
        feeling = rng.choice(_FEELINGS)
        turns: list[Turn] = []
        for k in range(pairs_per_dialogue):
            word = topic[k % len(topic)]
            post = f"i feel {feeling} about my {word} and i do not know what to do"
            strategy = ALL_STRATEGIES[(i + k) % len(ALL_STRATEGIES)]
            stem = _RESPONSE_STEMS[(i * pairs_per_dialogue + k) % len(_RESPONSE_STEMS)]
            turns.append(Turn(speaker="seeker", text=post))
            turns.append(
                Turn(speaker="supporter", text=stem.format(w=word), strategy=strategy)
            )
        dialogues.append(
            Dialogue(
                id=f"dlg-{i:03d}",
                persona=f"i care a lot about my {topic[0]}",
                situation=f"trouble with {topic[0]} lately",
                turns=tuple(turns),
            )
        )
    return dialogues
