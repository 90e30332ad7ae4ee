import numpy as np
import pytest

from parakit import corpus, decode, lora, model
from parakit.corpus import EOS_ID, PAD_ID, SEP_ID
from parakit.errors import SequenceTooLong
from parakit.rng import component_rng


@pytest.fixture
def setup():
    cfg = model.ModelConfig(vocab_size=16, dim=8, layers=1, heads=2, ff_dim=16,
                            max_len=24, init_scheme="gaussian", emb_std=0.3)
    params = model.init_parameters(cfg, component_rng(0, "init"))
    adapters = lora.AdapterSet.create(cfg, rank=2, rng=component_rng(0, "lora"))
    return cfg, params, adapters


class TestGenerate:
    def test_eos_forcing_gives_empty(self, setup):
        # zero every weight so the residual stream is the position encoding
        # alone, then point the EOS embedding at the resulting hidden state:
        # its logit is positive while every other logit is exactly zero
        cfg, params, _ = setup
        params = {k: np.zeros_like(v) for k, v in params.items()}
        params["lnf.g"] = np.ones_like(params["lnf.g"])
        for i in range(cfg.layers):
            params[f"layers.{i}.ln1.g"] = np.ones(cfg.dim, dtype=np.float32)
            params[f"layers.{i}.ln2.g"] = np.ones(cfg.dim, dtype=np.float32)
        prompt = [4, 5, SEP_ID]
        emb = model.embed(np.array(prompt), params, cfg)
        logits, trace = model.forward(emb, params, cfg)
        params["embed"][EOS_ID] = trace.final_hidden[-1]
        out = decode.generate(params, cfg, None, prompt,
                              decode.DecodeConfig(max_new_tokens=6))
        assert out == []

    def test_greedy_deterministic(self, setup):
        cfg, params, adapters = setup
        dc = decode.DecodeConfig(strategy="greedy", max_new_tokens=8)
        a = decode.generate(params, cfg, adapters, [4, 5, SEP_ID], dc)
        b = decode.generate(params, cfg, adapters, [4, 5, SEP_ID], dc)
        assert a == b

    def test_never_emits_sep_or_pad(self, setup):
        cfg, params, adapters = setup
        params = dict(params)
        params["embed"] = params["embed"].copy()
        params["embed"][SEP_ID] *= 100.0  # even a SEP-hungry head is masked
        params["embed"][PAD_ID] *= 100.0
        for seed in range(5):
            dc = decode.DecodeConfig(strategy="top-k", k=4, max_new_tokens=10, seed=seed)
            out = decode.generate(params, cfg, adapters, [4, 5, SEP_ID], dc)
            assert SEP_ID not in out and PAD_ID not in out

    def test_budget_respected(self, setup):
        cfg, params, adapters = setup
        for budget in (1, 3, 7):
            dc = decode.DecodeConfig(max_new_tokens=budget)
            out = decode.generate(params, cfg, adapters, [4, SEP_ID], dc)
            assert len(out) <= budget

    def test_prompt_must_end_with_sep(self, setup):
        cfg, params, adapters = setup
        with pytest.raises(ValueError):
            decode.generate(params, cfg, adapters, [4, 5],
                            decode.DecodeConfig(max_new_tokens=2))

    def test_over_budget_prompt(self, setup):
        cfg, params, adapters = setup
        prompt = [4] * 23 + [SEP_ID]
        with pytest.raises(SequenceTooLong):
            decode.generate(params, cfg, adapters, prompt,
                            decode.DecodeConfig(max_new_tokens=8))

    def test_topk_seeded_reproducible(self, setup):
        cfg, params, adapters = setup
        dc = decode.DecodeConfig(strategy="top-k", k=5, max_new_tokens=8, seed=3)
        a = decode.generate(params, cfg, adapters, [4, 5, SEP_ID], dc,
                            rng=np.random.default_rng(3))
        b = decode.generate(params, cfg, adapters, [4, 5, SEP_ID], dc,
                            rng=np.random.default_rng(3))
        assert a == b


class TestDetokenize:
    def test_plain_join(self, tiny_vocab):
        ids = [tiny_vocab.lookup("t1"), tiny_vocab.lookup("t2")]
        assert decode.detokenize(ids, tiny_vocab, "whitespace") == "t1 t2"

    def test_punctuation_attaches(self):
        vocab = corpus.build_vocab(["pasta ."], "whitespace", max_size=10)
        ids = [vocab.lookup("pasta"), vocab.lookup(".")]
        assert decode.detokenize(ids, vocab, "whitespace") == "pasta."

    def test_char_mode_concatenates(self):
        vocab = corpus.build_vocab(["好吃"], "char", max_size=10)
        ids = [vocab.lookup("好"), vocab.lookup("吃")]
        assert decode.detokenize(ids, vocab, "char") == "好吃"

    def test_unk_renders_literal(self, tiny_vocab):
        assert decode.detokenize([corpus.UNK_ID], tiny_vocab, "whitespace") == "<unk>"


class TestParaphrase:
    def test_identity_pipeline_on_copy_model(self):
        # a model trained to copy is simulated by generating from the prompt
        # itself: with p=0 and no stopwords the prompt is the input, so a
        # perfect copy model reproduces the input string; here we only check
        # the pipeline runs and is deterministic end to end
        cfg = model.ModelConfig(vocab_size=16, dim=8, layers=1, heads=2, ff_dim=16,
                                max_len=24, init_scheme="gaussian", emb_std=0.3)
        params = model.init_parameters(cfg, component_rng(1, "init"))
        adapters = lora.AdapterSet.create(cfg, rank=2, rng=component_rng(1, "lora"))
        vocab = corpus.build_vocab(["alpha beta gamma delta"], "whitespace", 16)
        cc = corpus.CorruptionConfig(shuffle_prob=0.0)
        outs = []
        for _ in range(2):
            outs.append(decode.paraphrase(
                "alpha beta", params, cfg, adapters, vocab, corpus.StopwordSet(),
                cc, decode.DecodeConfig(max_new_tokens=6),
                corrupt_rng=component_rng(2, "c"), sample_rng=component_rng(2, "s")))
        assert outs[0] == outs[1]
        assert isinstance(outs[0], str)
