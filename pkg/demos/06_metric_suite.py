"""Worked examples for the evaluation metrics.

Candidate quality and diversity pull in opposite directions: overlap scores
reward matching a reference, and the self- variants reward differing from
the input.  The composites balance the two.
"""

from parakit import corpus, metrics, model
from parakit.rng import component_rng

inp = "I like to eat pasta .".split()
cand_dull = "I like to eat pasta .".split()     # the input verbatim
cand_var = "I like eating pasta .".split()      # small rewording
ref = "My favourite food is pasta .".split()

print("== n-gram overlap ==")
for name, cand in (("verbatim", cand_dull), ("reworded", cand_var)):
    print(f"{name:9s} bleu(vs ref) {metrics.bleu(cand, [ref]):.4f}   "
          f"self_bleu {metrics.self_bleu(cand, inp):.4f}   "
          f"ibleu {metrics.ibleu(cand, [ref], inp):.4f}")

print("\n== edit rate ==")
print(f"ter(reworded, ref)        = {metrics.ter(cand_var, ref):.4f}")
print(f"self_ter(reworded, input) = {metrics.self_ter(cand_var, inp):.4f}")
print(f"self_ter(verbatim, input) = {metrics.self_ter(cand_dull, inp):.4f} "
      f"(no diversity)")
swap = "a b c d".split()
print(f"block swap 'a b c d' vs 'c d a b': "
      f"ter = {metrics.ter(swap, 'c d a b'.split()):.4f} (one shift / 4 tokens)")

print("\n== embedding-similarity proxy and composites ==")
cfg = model.ModelConfig(vocab_size=32, dim=16, layers=1, heads=2, ff_dim=16,
                        max_len=32, init_scheme="gaussian", emb_std=0.4)
params = model.init_parameters(cfg, component_rng(5, "init"))
vocab = corpus.build_vocab([" ".join(set(inp + ref))], "whitespace", 32)

sim_same = metrics.embed_sim("I like to eat pasta .", "I like to eat pasta .",
                             params, cfg, vocab)
sim_var = metrics.embed_sim("I like eating pasta .", "I like to eat pasta .",
                            params, cfg, vocab)
print(f"sim(x, x)        = {sim_same:.4f}")
print(f"sim(reworded, x) = {sim_var:.4f}")
sb = metrics.self_bleu(cand_var, inp)
print(f"composite of similarity and diversity = "
      f"{metrics.bert_ibleu(sim_var, sb):.4f}")
print(f"parascore-style  = "
      f"{metrics.parascore('I like to eat pasta .', 'I like eating pasta .', (), params, cfg, vocab):.4f}")

print("\n== corpus evaluation: one aggregate row per language ==")
records = [
    metrics.EvalRecord("I like to eat pasta .", "I like eating pasta .",
                       ("My favourite food is pasta .",), "en"),
    metrics.EvalRecord("I like to eat pasta .", "I like to eat pasta .", (), "en"),
]
report = metrics.evaluate_corpus(records, params, cfg, vocab)
print(metrics.render_table(report.language_rows()))
