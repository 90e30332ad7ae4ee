"""Autoregressive paraphrase generation.

Inference mirrors training: corrupt the input, present it with the separator
as a prompt, decode the continuation greedily or by top-k sampling, and map
ids back to text.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import corpus as corpus_mod
from .corpus import (
    EOS_ID,
    PAD_ID,
    SEP_ID,
    CorruptionConfig,
    StopwordSet,
    TokenSeq,
    Vocab,
    tokenize,
)
from .errors import SequenceTooLong
from .model import ModelConfig, embed, forward

STRATEGIES = ("greedy", "top-k")


@dataclass(frozen=True)
class DecodeConfig:
    strategy: str = "greedy"
    k: int = 5
    temperature: float = 1.0
    max_new_tokens: int = 24
    seed: int = 0

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.k < 1 or self.max_new_tokens < 1:
            raise ValueError("k and max_new_tokens must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def generate(
    params: dict[str, np.ndarray],
    model_cfg: ModelConfig,
    adapters,
    prompt_ids,
    config: DecodeConfig,
    rng: np.random.Generator | None = None,
    vocab_limit: int | None = None,
) -> list[int]:
    """Decode a continuation of ``prompt_ids`` (which must end with SEP).

    Stops at EOS or after ``max_new_tokens``; the returned ids contain the
    continuation only, with EOS stripped.  SEP and PAD can never be emitted,
    nor can ids at or beyond ``vocab_limit`` (the embedding table may be
    larger than the vocabulary actually in use).
    """
    config.validate()
    ids = [int(t) for t in prompt_ids]
    if not ids or ids[-1] != SEP_ID:
        raise ValueError("prompt must end with the separator token")
    if len(ids) + config.max_new_tokens > model_cfg.max_len:
        raise SequenceTooLong(
            required=len(ids) + config.max_new_tokens, limit=model_cfg.max_len)
    if rng is None:
        rng = np.random.default_rng(config.seed)

    out: list[int] = []
    for _ in range(config.max_new_tokens):
        emb = embed(np.array(ids, dtype=np.int64), params, model_cfg)
        logits, _ = forward(emb, params, model_cfg, adapters=adapters, want_trace=False)
        row = logits[-1].astype(np.float64).copy()
        row[SEP_ID] = -np.inf
        row[PAD_ID] = -np.inf
        if vocab_limit is not None and vocab_limit < row.shape[0]:
            row[vocab_limit:] = -np.inf
        if config.strategy == "greedy":
            nxt = int(np.argmax(row))
        else:
            top = np.argpartition(row, -config.k)[-config.k :]
            z = row[top] / config.temperature
            z -= z.max()
            p = np.exp(z)
            p /= p.sum()
            nxt = int(rng.choice(top, p=p))
        if nxt == EOS_ID:
            break
        out.append(nxt)
        ids.append(nxt)
    return out


def render_surfaces(surfaces, mode: str) -> str:
    """Join surface tokens back into text.

    Whitespace mode joins with single spaces but attaches punctuation-only
    tokens to the preceding word; char mode concatenates.
    """
    if mode == "char":
        return "".join(surfaces)
    parts: list[str] = []
    for s in surfaces:
        attach = bool(s) and all(corpus_mod._is_punct(ch) for ch in s)
        if parts and not attach:
            parts.append(" ")
        parts.append(s)
    return "".join(parts)


def detokenize(token_ids, vocab: Vocab, mode: str | None = None) -> str:
    """Render ids as text; unknown ids print as the literal ``<unk>``."""
    mode = vocab.mode if mode is None else mode
    surfaces = [vocab.surface(int(t)) if int(t) < len(vocab) else "<unk>"
                for t in token_ids]
    return render_surfaces(surfaces, mode)


def paraphrase(
    text: str,
    params: dict[str, np.ndarray],
    model_cfg: ModelConfig,
    adapters,
    vocab: Vocab,
    stopwords: StopwordSet,
    corruption: CorruptionConfig,
    decode_cfg: DecodeConfig,
    corrupt_rng: np.random.Generator,
    sample_rng: np.random.Generator | None = None,
) -> str:
    """Full inference pipeline: corrupt, prompt with SEP, decode, detokenize."""
    target = tokenize(text, vocab)
    source = corpus_mod.corrupt(target, stopwords, corruption, corrupt_rng)
    prompt = list(source.ids) + [SEP_ID]
    max_new = min(decode_cfg.max_new_tokens, model_cfg.max_len - len(prompt))
    if max_new < 1:
        raise SequenceTooLong(required=len(prompt) + 1, limit=model_cfg.max_len)
    cfg = DecodeConfig(
        strategy=decode_cfg.strategy, k=decode_cfg.k,
        temperature=decode_cfg.temperature, max_new_tokens=max_new,
        seed=decode_cfg.seed)
    continuation = generate(params, model_cfg, adapters, prompt, cfg,
                            rng=sample_rng, vocab_limit=len(vocab))
    return detokenize(continuation, vocab)


def prompt_for(source: TokenSeq) -> list[int]:
    """Source ids plus the separator, ready for ``generate``."""
    return list(source.ids) + [SEP_ID]
