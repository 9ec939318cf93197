"""Word-level tokenizer over the closed synthetic-caption grammar."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PAD, UNK, BOS, EOS, MASK = "<pad>", "<unk>", "<bos>", "<eos>", "<mask>"
SPECIALS = (PAD, UNK, BOS, EOS, MASK)


@dataclass
class TextMaskPlan:
    mask: np.ndarray   # bool, length C
    prob: float

    @property
    def count(self) -> int:
        return int(self.mask.sum())


class Tokenizer:
    """Fixed-vocabulary word tokenizer with BOS/EOS framing and padding."""

    def __init__(self, words: list[str], context_length: int):
        seen: dict[str, None] = {}
        for w in words:
            if w not in SPECIALS:
                seen.setdefault(w, None)
        self.vocab: dict[str, int] = {w: i for i, w in enumerate(SPECIALS)}
        for w in seen:
            self.vocab[w] = len(self.vocab)
        self.inverse = {i: w for w, i in self.vocab.items()}
        self.context_length = context_length
        self.pad_id = self.vocab[PAD]
        self.unk_id = self.vocab[UNK]
        self.bos_id = self.vocab[BOS]
        self.eos_id = self.vocab[EOS]
        self.mask_id = self.vocab[MASK]

    def __len__(self) -> int:
        return len(self.vocab)

    def encode(self, caption: str) -> np.ndarray:
        """BOS + words + EOS, padded/truncated to the context length.

        EOS is always present; truncation keeps it at the final position.
        """
        ids = [self.bos_id]
        for word in caption.lower().split():
            ids.append(self.vocab.get(word, self.unk_id))
        ids.append(self.eos_id)
        if len(ids) > self.context_length:
            ids = ids[: self.context_length - 1] + [self.eos_id]
        ids = ids + [self.pad_id] * (self.context_length - len(ids))
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids: np.ndarray) -> str:
        words = []
        for i in ids:
            w = self.inverse[int(i)]
            if w in (PAD, BOS, EOS):
                continue
            words.append(w)
        return " ".join(words)

    def special_positions(self, ids: np.ndarray) -> np.ndarray:
        """Boolean vector marking PAD/BOS/EOS positions (never maskable)."""
        return np.isin(ids, [self.pad_id, self.bos_id, self.eos_id])

    def to_dict(self) -> dict[str, int]:
        return dict(self.vocab)

    @classmethod
    def from_dict(cls, vocab: dict[str, int], context_length: int) -> "Tokenizer":
        ordered = sorted(vocab.items(), key=lambda kv: kv[1])
        tok = cls([w for w, _ in ordered], context_length)
        if tok.vocab != dict(vocab):
            raise ValueError("vocabulary dict is not contiguous from 0")
        return tok

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path, context_length: int) -> "Tokenizer":
        return cls.from_dict(json.loads(Path(path).read_text()), context_length)


def mask_caption(tokens: np.ndarray, prob: float, rng: np.random.Generator,
                 tokenizer: Tokenizer) -> tuple[np.ndarray, TextMaskPlan]:
    """Independently mask each non-special position with probability prob.

    Masked positions carry the mask id; there are no random-word or
    keep-identity substitutions.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    maskable = ~tokenizer.special_positions(tokens)
    draw = rng.random(tokens.shape[0]) < prob
    mask = maskable & draw
    masked_tokens = np.where(mask, tokenizer.mask_id, tokens)
    return masked_tokens, TextMaskPlan(mask=mask, prob=prob)
