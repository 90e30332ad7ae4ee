"""Automatic paraphrase evaluation metrics.

Quality and diversity are scored together: BLEU/TER against references,
their self- variants against the input (lexical-diversity proxies), and
composites that trade semantic similarity against lexical overlap.  The
semantic-similarity column is a proxy computed from the package's own
trained encoder states rather than an external pretrained model, and is
labelled as such in reports.

All scores are kept in [0, 1] internally (TER excepted, it is a rate that
can exceed 1) and scaled by 100 only for display.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import corpus as corpus_mod
from .corpus import Vocab
from .errors import EmptyCorpus, EmptySequence
from .model import ModelConfig, embed, forward

REPORT_COLUMNS = (
    "bleu", "self_bleu", "ter", "self_ter",
    "ibleu", "sim_proxy", "bert_ibleu_proxy", "parascore_proxy",
)


@dataclass(frozen=True)
class MetricConfig:
    ibleu_alpha: float = 0.7
    bert_ibleu_beta: float = 4.0
    parascore_omega: float = 0.05
    tokenize_mode: str = "whitespace"


@dataclass(frozen=True)
class EvalRecord:
    """One evaluation item: input, candidate, optional references."""

    input: str
    candidate: str
    references: tuple[str, ...] = ()
    lang: str = "en"

    def validate(self) -> None:
        if not self.input.strip() or not self.candidate.strip():
            raise EmptySequence("input and candidate must be non-empty")
        if any(not r.strip() for r in self.references):
            raise EmptySequence("references must be non-empty")


# ---------------------------------------------------------------------------
# n-gram overlap
# ---------------------------------------------------------------------------

def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence, references: Sequence[Sequence], max_n: int = 4) -> float:
    """Sentence BLEU: modified n-gram precision with a brevity penalty.

    Orders longer than the candidate are dropped from the geometric mean;
    when any remaining precision is zero, orders >= 2 get add-one smoothing
    (a zero unigram precision still yields 0).
    """
    if len(candidate) == 0 or not references or any(len(r) == 0 for r in references):
        raise EmptySequence("bleu needs a candidate and at least one non-empty reference")
    c = len(candidate)
    matches: list[int] = []
    totals: list[int] = []
    for n in range(1, max_n + 1):
        total = c - n + 1
        if total <= 0:
            break
        cand_counts = _ngrams(candidate, n)
        best = Counter()
        for ref in references:
            ref_counts = _ngrams(ref, n)
            for gram, cnt in ref_counts.items():
                if cnt > best[gram]:
                    best[gram] = cnt
        matches.append(sum(min(cnt, best[g]) for g, cnt in cand_counts.items()))
        totals.append(total)
    if matches[0] == 0:
        return 0.0
    smooth = any(m == 0 for m in matches)
    log_sum = 0.0
    for n, (m, t) in enumerate(zip(matches, totals), start=1):
        if smooth and n >= 2:
            m, t = m + 1, t + 1
        log_sum += math.log(m / t)
    geo = math.exp(log_sum / len(matches))
    r = min((len(ref) for ref in references), key=lambda rl: (abs(rl - c), rl))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * geo


def self_bleu(candidate: Sequence, input_tokens: Sequence) -> float:
    """BLEU of the candidate against the input; lower means more diverse."""
    return bleu(candidate, [input_tokens])


# ---------------------------------------------------------------------------
# Translation edit rate
# ---------------------------------------------------------------------------

def levenshtein(a: Sequence, b: Sequence) -> int:
    """Token-level edit distance (insert/delete/substitute, unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ai in enumerate(a, start=1):
        cur = [i]
        for j, bj in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ai != bj)))
        prev = cur
    return prev[-1]


def _best_shift(cur: tuple, reference: Sequence, base: int):
    """The single block move that most reduces edit distance, if any."""
    best_dist = base
    best_seq = None
    n = len(cur)
    for i in range(n):
        for length in range(1, n - i + 1):
            block = cur[i : i + length]
            rest = cur[:i] + cur[i + length :]
            for j in range(len(rest) + 1):
                if j == i:
                    continue
                moved = rest[:j] + block + rest[j:]
                d = levenshtein(moved, reference)
                if d < best_dist:
                    best_dist = d
                    best_seq = moved
                    if d == 0:
                        return best_dist, best_seq
    return best_dist, best_seq


def ter(candidate: Sequence, reference: Sequence) -> float:
    """Translation edit rate: (edits + block shifts) / reference length.

    Shift search is greedy: repeatedly apply the single block move that most
    reduces the remaining edit distance (cost 1 per move), then charge the
    leftover Levenshtein edits.  Cost grows steeply with length (all blocks
    times all destinations, each scored by an edit-distance pass), which is
    fine for sentence-scale inputs.
    """
    if len(reference) == 0:
        raise EmptySequence("ter needs a non-empty reference")
    cur = tuple(candidate)
    ref = tuple(reference)
    shifts = 0
    dist = levenshtein(cur, ref)
    while dist > 0:
        new_dist, moved = _best_shift(cur, ref, dist)
        if moved is None:
            break
        cur = moved
        dist = new_dist
        shifts += 1
    return (shifts + dist) / len(ref)


def self_ter(candidate: Sequence, input_tokens: Sequence) -> float:
    """TER of the candidate against the input; higher means more diverse."""
    return ter(candidate, input_tokens)


def ibleu(candidate: Sequence, references: Sequence[Sequence], input_tokens: Sequence,
          alpha: float = 0.7) -> float:
    """alpha * BLEU(candidate, references) - (1 - alpha) * self-BLEU."""
    if not references:
        raise EmptySequence("ibleu needs at least one reference")
    return alpha * bleu(candidate, references) - (1.0 - alpha) * self_bleu(candidate, input_tokens)


# ---------------------------------------------------------------------------
# Embedding-similarity proxy and composites
# ---------------------------------------------------------------------------

def _hidden_states(text: str, params, model_cfg: ModelConfig, vocab: Vocab,
                   adapters=None, mode: str | None = None) -> np.ndarray:
    toks = corpus_mod.tokenize(text, vocab, mode)
    ids = np.asarray(toks.ids, dtype=np.int64)[: model_cfg.max_len]
    emb = embed(ids, params, model_cfg)
    _, trace = forward(emb, params, model_cfg, adapters=adapters)
    return trace.final_hidden


def embed_sim(a: str, b: str, params, model_cfg: ModelConfig, vocab: Vocab,
              adapters=None, mode: str | None = None) -> float:
    """Greedy-matching F1 over cosine similarities of final hidden states.

    Symmetric in its two arguments by construction and 1.0 for identical
    inputs; this is the package's self-hosted stand-in for an external
    contextual-embedding similarity.
    """
    ha = _hidden_states(a, params, model_cfg, vocab, adapters, mode)
    hb = _hidden_states(b, params, model_cfg, vocab, adapters, mode)
    na = ha / np.maximum(np.linalg.norm(ha, axis=1, keepdims=True), 1e-12)
    nb = hb / np.maximum(np.linalg.norm(hb, axis=1, keepdims=True), 1e-12)
    sims = na @ nb.T
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    if abs(precision + recall) < 1e-12:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def bert_ibleu(sim: float, self_bleu_score: float, beta: float = 4.0) -> float:
    """Weighted harmonic mean of similarity and lexical diversity.

    ``(beta + 1) / (beta / sim + 1 / (1 - self_bleu))`` with sim clamped to
    [0, 1]; degenerate denominators (no similarity or no diversity) give 0.
    """
    sim = min(max(sim, 0.0), 1.0)
    diversity = 1.0 - self_bleu_score
    if sim <= 0.0 or diversity <= 0.0:
        return 0.0
    return (beta + 1.0) / (beta / sim + 1.0 / diversity)


def parascore(input_text: str, candidate: str, references: Sequence[str],
              params, model_cfg: ModelConfig, vocab: Vocab, adapters=None,
              omega: float = 0.05, mode: str | None = None) -> float:
    """Similarity plus a small bonus for token-level edit diversity.

    Similarity is taken against the references when present (best match),
    otherwise against the input; the diversity term is the normalized
    Levenshtein distance between input and candidate.
    """
    if references:
        sim = max(embed_sim(candidate, r, params, model_cfg, vocab, adapters, mode)
                  for r in references)
    else:
        sim = embed_sim(candidate, input_text, params, model_cfg, vocab, adapters, mode)
    mode_eff = vocab.mode if mode is None else mode
    in_toks = corpus_mod.split_surfaces(input_text, mode_eff)
    cand_toks = corpus_mod.split_surfaces(candidate, mode_eff)
    ds = levenshtein(in_toks, cand_toks) / max(len(in_toks), len(cand_toks), 1)
    return sim + omega * ds


# ---------------------------------------------------------------------------
# Corpus evaluation
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    """Per-record rows plus per-language macro averages."""

    records: list[dict] = field(default_factory=list)
    languages: dict[str, dict[str, Optional[float]]] = field(default_factory=dict)

    def language_rows(self) -> list[tuple[str, dict[str, Optional[float]]]]:
        return sorted(self.languages.items())


def score_record(record: EvalRecord, params, model_cfg: ModelConfig, vocab: Vocab,
                 adapters=None, config: MetricConfig = MetricConfig()) -> dict:
    """All metric columns for one record; reference metrics are None without refs."""
    record.validate()
    mode = config.tokenize_mode
    inp = corpus_mod.split_surfaces(record.input, mode)
    cand = corpus_mod.split_surfaces(record.candidate, mode)
    refs = [corpus_mod.split_surfaces(r, mode) for r in record.references]
    sb = self_bleu(cand, inp)
    sim = embed_sim(record.candidate, record.input, params, model_cfg, vocab, adapters, mode)
    row: dict = {
        "lang": record.lang,
        "self_bleu": sb,
        "ter": ter(cand, refs[0]) if refs else None,
        "self_ter": self_ter(cand, inp),
        "sim_proxy": sim,
        "bert_ibleu_proxy": bert_ibleu(sim, sb, config.bert_ibleu_beta),
        "parascore_proxy": parascore(
            record.input, record.candidate, record.references,
            params, model_cfg, vocab, adapters, config.parascore_omega, mode),
    }
    if refs:
        row["bleu"] = bleu(cand, refs)
        row["ibleu"] = ibleu(cand, refs, inp, config.ibleu_alpha)
    else:
        row["bleu"] = None
        row["ibleu"] = None
    return row


def evaluate_corpus(records: Sequence[EvalRecord], params, model_cfg: ModelConfig,
                    vocab: Vocab, adapters=None,
                    config: MetricConfig = MetricConfig()) -> MetricReport:
    """Score every record and macro-average each metric per language.

    Reference-dependent columns average over the records that have
    references; languages with none leave those cells empty.
    """
    if not records:
        raise EmptyCorpus("no evaluation records")
    report = MetricReport()
    for rec in records:
        report.records.append(
            score_record(rec, params, model_cfg, vocab, adapters, config))
    langs = sorted({row["lang"] for row in report.records})
    for lang in langs:
        rows = [r for r in report.records if r["lang"] == lang]
        agg: dict[str, Optional[float]] = {}
        for col in REPORT_COLUMNS:
            vals = [r[col] for r in rows if r[col] is not None]
            agg[col] = sum(vals) / len(vals) if vals else None
        agg["count"] = float(len(rows))
        report.languages[lang] = agg
    return report


def render_table(rows: list[tuple[str, dict[str, Optional[float]]]],
                 scale: float = 100.0) -> str:
    """Fixed-width text table of per-language aggregates, scores scaled x100."""
    header = ["lang", "n"] + list(REPORT_COLUMNS)
    widths = [6, 5] + [max(len(c), 8) for c in REPORT_COLUMNS]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for lang, agg in rows:
        cells = [lang.ljust(widths[0]), str(int(agg.get("count", 0))).ljust(widths[1])]
        for col, w in zip(REPORT_COLUMNS, widths[2:]):
            v = agg.get(col)
            cells.append(("-" if v is None else f"{scale * v:.2f}").ljust(w))
        out.append("  ".join(cells))
    return "\n".join(out)
