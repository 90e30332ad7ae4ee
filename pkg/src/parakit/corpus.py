"""Synthetic parallel corpus construction.

A monolingual sentence becomes a training pair by corrupting it: stopwords
are removed and, with some probability, the remaining tokens are shuffled.
The corrupted sentence is the source prompt, the original sentence is the
reconstruction target, and the two are packed into one decoder sequence with
a separator token between them.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyCorpus, EmptyInput, SequenceTooLong

# Reserved token ids, fixed at the bottom of every vocabulary.
UNK_ID = 0
SEP_ID = 1
EOS_ID = 2
PAD_ID = 3
RESERVED_SURFACES = ("<unk>", "\n", "<eos>", "<pad>")
N_RESERVED = 4

TOKENIZE_MODES = ("whitespace", "char")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def split_surfaces(text: str, mode: str) -> list[str]:
    """Split raw text into surface tokens without consulting a vocabulary.

    whitespace mode splits on Unicode whitespace and detaches leading and
    trailing punctuation characters as individual tokens; char mode emits one
    token per non-whitespace Unicode scalar (for scripts written without word
    boundaries).
    """
    if mode not in TOKENIZE_MODES:
        raise ValueError(f"unknown tokenize mode {mode!r}")
    if not text.strip():
        raise EmptyInput("text is empty after trimming")
    if mode == "char":
        return [ch for ch in text if not ch.isspace()]
    tokens: list[str] = []
    for chunk in text.split():
        lead: list[str] = []
        while chunk and _is_punct(chunk[0]):
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail: list[str] = []
        while chunk and _is_punct(chunk[-1]):
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


@dataclass(frozen=True)
class Vocab:
    """Bijective token/id tables with four reserved ids at 0..3."""

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]
    mode: str = "whitespace"

    def __post_init__(self):
        if len(self.id_to_token) < N_RESERVED + 1:
            raise EmptyCorpus("vocabulary needs at least one non-reserved token")
        if self.id_to_token[:N_RESERVED] != RESERVED_SURFACES:
            raise ValueError("reserved ids 0..3 must be UNK, SEP, EOS, PAD")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, surface: str) -> int:
        return self.token_to_id.get(surface, UNK_ID)

    def surface(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    @staticmethod
    def from_surfaces(surfaces: Sequence[str], mode: str = "whitespace") -> "Vocab":
        id_to_token = RESERVED_SURFACES + tuple(surfaces)
        token_to_id = {tok: i for i, tok in enumerate(id_to_token)}
        return Vocab(token_to_id=token_to_id, id_to_token=id_to_token, mode=mode)

    def save(self, path: str | Path) -> None:
        lines = [f"parakit-vocab 1 mode={self.mode}"]
        lines.extend(self.id_to_token[N_RESERVED:])
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "Vocab":
        raw = Path(path).read_text(encoding="utf-8").splitlines()
        if not raw or not raw[0].startswith("parakit-vocab 1 "):
            raise EmptyCorpus(f"{path}: not a vocab file")
        mode = raw[0].split("mode=", 1)[1]
        return Vocab.from_surfaces(raw[1:], mode=mode)


@dataclass(frozen=True)
class TokenSeq:
    """A sentence as token ids plus the original surfaces (for detokenization)."""

    ids: tuple[int, ...]
    surfaces: tuple[str, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.surfaces):
            raise ValueError("ids and surfaces must align")

    def __len__(self) -> int:
        return len(self.ids)


class StopwordSet:
    """Case-insensitive set of removable surface forms for one language."""

    def __init__(self, words: Iterable[str] = ()):
        self._words = frozenset(w.strip().lower() for w in words if w.strip())

    def __contains__(self, surface: str) -> bool:
        return surface.lower() in self._words

    def __len__(self) -> int:
        return len(self._words)

    @staticmethod
    def load(path: str | Path) -> "StopwordSet":
        return StopwordSet(Path(path).read_text(encoding="utf-8").splitlines())


def load_stopword_dir(path: str | Path) -> dict[str, StopwordSet]:
    """Read every ``<lang>.txt`` in a directory into a per-language set."""
    table: dict[str, StopwordSet] = {}
    for f in sorted(Path(path).glob("*.txt")):
        table[f.stem] = StopwordSet.load(f)
    return table


@dataclass(frozen=True)
class CorruptionConfig:
    """Probability of shuffling the stopword-stripped sentence."""

    shuffle_prob: float = 0.33
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.shuffle_prob <= 1.0:
            raise ValueError("shuffle_prob must lie in [0, 1]")


@dataclass(frozen=True)
class TrainingPair:
    """Corrupted source and clean target for one sentence."""

    source: TokenSeq
    target: TokenSeq


@dataclass(frozen=True)
class PackedSequence:
    """source + SEP + target + EOS in one token stream.

    ``sep_index`` is the position of the separator; ``loss_mask`` is True
    exactly on the positions after it (the target tokens and the EOS).
    """

    tokens: np.ndarray
    sep_index: int
    loss_mask: np.ndarray

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    def unpack(self) -> tuple[np.ndarray, np.ndarray]:
        """Recover (source ids, target ids) by slicing around the separator."""
        k = self.sep_index
        return self.tokens[:k].copy(), self.tokens[k + 1 : -1].copy()

    def prediction_rows(self) -> np.ndarray:
        """Boolean mask over logit rows that predict a masked position.

        Row i scores the token at position i+1, so the rows feeding the loss
        are the ones whose successor is masked.
        """
        rows = np.zeros(len(self), dtype=bool)
        rows[:-1] = self.loss_mask[1:]
        return rows


def tokenize(text: str, vocab: Vocab, mode: str | None = None) -> TokenSeq:
    """Map text to a TokenSeq under ``vocab``; unknown surfaces become UNK."""
    mode = vocab.mode if mode is None else mode
    surfaces = split_surfaces(text, mode)
    ids = tuple(vocab.lookup(s) for s in surfaces)
    return TokenSeq(ids=ids, surfaces=tuple(surfaces))


def build_vocab(lines: Iterable[str], mode: str, max_size: int) -> Vocab:
    """Keep the most frequent surfaces, ties broken lexicographically.

    ``max_size`` counts the four reserved ids, so at most ``max_size - 4``
    surfaces survive.
    """
    counts: dict[str, int] = {}
    saw_line = False
    for line in lines:
        if not line.strip():
            continue
        saw_line = True
        for s in split_surfaces(line, mode):
            counts[s] = counts.get(s, 0) + 1
    if not saw_line:
        raise EmptyCorpus("corpus has no non-empty lines")
    budget = max(max_size - N_RESERVED, 1)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [surface for surface, _ in ranked[:budget]]
    return Vocab.from_surfaces(kept, mode=mode)


def corrupt(
    target: TokenSeq,
    stopwords: StopwordSet,
    config: CorruptionConfig,
    rng: np.random.Generator,
) -> TokenSeq:
    """Remove stopwords, then shuffle the remainder with probability p.

    The shuffle is a single whole-sentence event: one uniformly random
    permutation applied to all surviving tokens.  If stopword removal leaves
    nothing, the original sentence is returned unchanged so the training
    prompt is never empty.
    """
    keep = [i for i, s in enumerate(target.surfaces) if s not in stopwords]
    if not keep:
        return target
    if rng.random() < config.shuffle_prob:
        order = rng.permutation(len(keep))
        keep = [keep[int(j)] for j in order]
    return TokenSeq(
        ids=tuple(target.ids[i] for i in keep),
        surfaces=tuple(target.surfaces[i] for i in keep),
    )


def pack(pair: TrainingPair, vocab: Vocab, max_len: int) -> PackedSequence:
    """Concatenate source, SEP, target, EOS and mark the loss positions."""
    needed = len(pair.source) + len(pair.target) + 2
    if needed > max_len:
        raise SequenceTooLong(required=needed, limit=max_len)
    tokens = np.array(
        list(pair.source.ids) + [SEP_ID] + list(pair.target.ids) + [EOS_ID],
        dtype=np.int64,
    )
    k = len(pair.source)
    mask = np.zeros(needed, dtype=bool)
    mask[k + 1 :] = True
    return PackedSequence(tokens=tokens, sep_index=k, loss_mask=mask)


def make_pairs(
    lines: Iterable[str],
    vocab: Vocab,
    stopwords: StopwordSet,
    config: CorruptionConfig,
    rng: np.random.Generator,
) -> list[TrainingPair]:
    """Corrupt every non-empty line into a (source, target) pair."""
    pairs = []
    for line in lines:
        if not line.strip():
            continue
        target = tokenize(line, vocab)
        pairs.append(TrainingPair(source=corrupt(target, stopwords, config, rng), target=target))
    if not pairs:
        raise EmptyCorpus("corpus has no non-empty lines")
    return pairs
