"""Walk through the synthetic-pair pipeline: tokenize, corrupt, pack.

A monolingual sentence becomes (corrupted source, clean target), then one
packed decoder sequence with a separator and a loss mask over the target.
"""

import numpy as np

from parakit import corpus

print("== tokenization ==")
vocab = corpus.build_vocab(
    ["I like to eat pasta .", "I like noodles .", "pasta is great ."],
    mode="whitespace", max_size=32)
print(f"vocabulary: {len(vocab)} ids (4 reserved), "
      f"surfaces {vocab.id_to_token[4:]}")

sentence = "I like to eat pasta."
toks = corpus.tokenize(sentence, vocab)
print(f"{sentence!r} -> {toks.surfaces}  ids {toks.ids}")

print("\n== corruption: stopword removal plus probabilistic shuffle ==")
stopwords = corpus.StopwordSet(["i", "to", "is"])
rng = np.random.default_rng(0)
keywords = corpus.corrupt(toks, stopwords, corpus.CorruptionConfig(shuffle_prob=0.0), rng)
print(f"stopwords removed:    {keywords.surfaces}")
shuffled = corpus.corrupt(toks, stopwords, corpus.CorruptionConfig(shuffle_prob=1.0), rng)
print(f"removed and shuffled: {shuffled.surfaces}")

print("\n== packing: source + SEP + target + EOS with a target-side loss mask ==")
pair = corpus.TrainingPair(source=shuffled, target=toks)
packed = corpus.pack(pair, vocab, max_len=32)
print(f"tokens     {packed.tokens.tolist()}")
print(f"separator  at index {packed.sep_index}")
print(f"loss mask  {packed.loss_mask.astype(int).tolist()}")
src, tgt = packed.unpack()
print(f"unpacked   source {src.tolist()} target {tgt.tolist()}")
assert list(tgt) == list(toks.ids)
print("round trip recovers the original target exactly")
