"""Desk-scale unsupervised paraphrasing: corrupt-and-reconstruct corpus
synthesis, a small decoder-only language model fine-tuned through low-rank
adapters under virtual adversarial training, and a paraphrase metric suite.
"""

from . import checkpoint, cli, config, corpus, decode, lora, metrics, model, vat  # noqa: F401

__all__ = [
    "checkpoint", "cli", "config", "corpus", "decode",
    "lora", "metrics", "model", "vat",
]
__version__ = "0.1.0"
