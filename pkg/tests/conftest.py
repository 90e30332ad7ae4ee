import numpy as np
import pytest

from parakit import corpus, lora, model
from parakit.rng import component_rng


@pytest.fixture
def tiny_vocab():
    return corpus.Vocab.from_surfaces([f"t{i}" for i in range(12)])


@pytest.fixture
def tiny_model():
    """A <=1e3-parameter model in float64 for gradient work."""
    cfg = model.ModelConfig(vocab_size=16, dim=8, layers=1, heads=2, ff_dim=16,
                            max_len=16, init_scheme="gaussian", emb_std=0.3)
    rng = component_rng(7, "tiny-model")
    params = model.init_parameters(cfg, rng, dtype=np.float64)
    adapters = lora.AdapterSet.create(cfg, rank=2, rng=rng, dtype=np.float64)
    for ad in adapters.adapters.values():
        ad.b += rng.normal(0.0, 0.05, ad.b.shape)
    return cfg, params, adapters


@pytest.fixture
def packed_example(tiny_vocab):
    pair = corpus.TrainingPair(
        source=corpus.TokenSeq(ids=(4, 5, 6), surfaces=("a", "b", "c")),
        target=corpus.TokenSeq(ids=(6, 5, 4, 7), surfaces=("c", "b", "a", "d")),
    )
    return corpus.pack(pair, tiny_vocab, max_len=16)


def finite_difference(fn, arr, indices, h=1e-5):
    """Central finite differences of a scalar function at chosen flat indices."""
    flat = arr.ravel()
    out = {}
    for i in indices:
        old = flat[i]
        flat[i] = old + h
        up = fn()
        flat[i] = old - h
        down = fn()
        flat[i] = old
        out[i] = (up - down) / (2.0 * h)
    return out


def max_rel_err(analytic: np.ndarray, fd: dict[int, float]) -> float:
    flat = analytic.ravel()
    worst = 0.0
    for i, v in fd.items():
        denom = max(abs(v), abs(flat[i]), 1e-8)
        worst = max(worst, abs(v - flat[i]) / denom)
    return worst
