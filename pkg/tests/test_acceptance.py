"""Acceptance suite: one test per criterion, one PASS line printed each.

The end-to-end reconstruction run (criterion 7) trains the full desk-scale
configuration and dominates the suite's runtime; everything else is fast.
"""

import csv
import itertools
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from parakit import cli, corpus, decode, lora, metrics, model, vat
from parakit.checkpoint import load_checkpoint, save_checkpoint
from parakit.rng import component_rng

from conftest import finite_difference, max_rel_err
from test_metrics import exhaustive_ter


@contextmanager
def criterion(number: int, title: str):
    try:
        yield
    except Exception:
        print(f"ACCEPTANCE {number} FAIL: {title}")
        raise
    print(f"ACCEPTANCE {number} PASS: {title}")


# ---------------------------------------------------------------------------
# Shared toy artifacts
# ---------------------------------------------------------------------------

def tiny_setup(dtype=np.float64, seed=7):
    cfg = model.ModelConfig(vocab_size=16, dim=8, layers=1, heads=2, ff_dim=16,
                            max_len=16, init_scheme="gaussian", emb_std=0.3)
    params = model.init_parameters(cfg, component_rng(seed, "init"), dtype=dtype)
    adapters = lora.AdapterSet.create(cfg, rank=2, rng=component_rng(seed, "lora"),
                                      dtype=dtype)
    for ad in adapters.adapters.values():
        ad.b += component_rng(seed, "bwarm").normal(0, 0.05, ad.b.shape)
    vocab = corpus.Vocab.from_surfaces([f"t{i}" for i in range(12)])
    rng = component_rng(seed, "data")
    pairs = []
    for _ in range(6):
        n = int(rng.integers(2, 5))
        ids = tuple(int(x) for x in rng.integers(4, 16, n))
        seq = corpus.TokenSeq(ids=ids, surfaces=("x",) * n)
        pairs.append(corpus.pack(corpus.TrainingPair(seq, seq), vocab, 16))
    return cfg, params, adapters, pairs


def copy_corpus(seed: int, n_lines: int, n_words: int = 64):
    rng = component_rng(seed, "corpus")
    words = [f"w{i:02d}" for i in range(n_words)]
    lines = []
    for _ in range(n_lines):
        ln = int(rng.integers(5, 13))
        picks = rng.choice(n_words, size=ln, replace=False)
        lines.append(" ".join(words[i] for i in picks))
    return lines


def test_criterion_1_gradient_correctness():
    with criterion(1, "analytic gradients match central finite differences (<1e-4)"):
        start = time.monotonic()
        cfg, params, adapters, pairs = tiny_setup()
        packed = pairs[0]
        rng = component_rng(11, "fd")
        delta = rng.normal(0.0, 0.05, (len(packed), cfg.dim))
        emb = model.embed(packed, params, cfg)
        clean_logits, _ = model.forward(emb, params, cfg, adapters=adapters,
                                        want_trace=False)
        clean_frozen = clean_logits.copy()
        mask = packed.prediction_rows()

        logits, trace = model.forward(emb, params, cfg, perturbation=delta,
                                      adapters=adapters)
        _, dlog_rec = model.loss_rec_with_grad(logits, packed)
        _, dlog_kl = model.kl_div_with_grad(logits, clean_frozen, mask)
        g_rec = model.backward(trace, dlog_rec)
        g_kl = model.backward(trace, dlog_kl)

        def rec_loss():
            e = model.embed(packed, params, cfg)
            lg, _ = model.forward(e, params, cfg, perturbation=delta,
                                  adapters=adapters, want_trace=False)
            return model.loss_rec(lg, packed)

        def kl_loss():
            e = model.embed(packed, params, cfg)
            lg, _ = model.forward(e, params, cfg, perturbation=delta,
                                  adapters=adapters, want_trace=False)
            return model.kl_div(lg, clean_frozen, mask)

        worst = 0.0
        for loss_fn, grads in ((rec_loss, g_rec), (kl_loss, g_kl)):
            for key, g in grads.adapters.items():
                layer, target, factor = key.split(".")
                ad = adapters.get(int(layer), target)
                arr = ad.a if factor == "A" else ad.b
                fd = finite_difference(loss_fn, arr, range(arr.size), h=1e-5)
                worst = max(worst, max_rel_err(g, fd))
            fd = finite_difference(loss_fn, delta, range(delta.size), h=1e-5)
            worst = max(worst, max_rel_err(grads.d_embeddings, fd))
        # base weights on the reconstruction loss as well
        model.add_embedding_lookup_grad(g_rec, packed)
        for name in model.parameter_names(cfg):
            arr = params[name]
            idx = rng.choice(arr.size, size=min(24, arr.size), replace=False)
            fd = finite_difference(rec_loss, arr, idx, h=1e-5)
            worst = max(worst, max_rel_err(g_rec.params[name], fd))
        elapsed = time.monotonic() - start
        assert worst < 1e-4, f"max relative error {worst}"
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


def test_criterion_2_algorithm_reduction_to_sgd():
    with criterion(2, "alpha=0, K=1, gamma=0 matches a plain SGD step (<1e-6)"):
        cfg, params, adapters, pairs = tiny_setup()
        batch = pairs[:3]
        tau = 1e-3

        reference = adapters.copy()
        accum = reference.zeros_like_grads()
        for pk in batch:
            emb = model.embed(pk, params, cfg)
            logits, trace = model.forward(emb, params, cfg, adapters=reference)
            _, dlogits = model.loss_rec_with_grad(logits, pk)
            for name, g in model.backward(trace, dlogits).adapters.items():
                accum[name] += g / len(batch)
        reference.apply_update(accum, tau)

        vcfg = vat.VATConfig(alpha=0.0, ascent_steps=1, gamma=0.0, tau=tau,
                             epochs=1, pgd_epochs=1, batch_size=len(batch))
        vat.minibatch_step(params, cfg, adapters, batch, vcfg, epoch=1,
                           rng=component_rng(0, "d"),
                           hessian_rng=component_rng(0, "h"))
        worst = 0.0
        for (_, got), (_, want) in zip(adapters.tensor_items(),
                                       reference.tensor_items()):
            denom = np.maximum(np.abs(want), 1e-12)
            worst = max(worst, float(np.max(np.abs(got - want) / denom)))
        assert worst < 1e-6, f"max relative parameter delta {worst}"


def test_criterion_3_projection_invariants():
    with criterion(3, "projection stays in the ball; unit-H Newton step == PGD bitwise"):
        rng = np.random.default_rng(303)
        for _ in range(10_000):
            shape = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
            delta = rng.normal(0.0, float(rng.uniform(0.01, 20.0)), shape)
            eps = float(rng.uniform(1e-3, 8.0))
            assert vat.frob(vat.project_ball(delta, eps)) <= eps * (1 + 1e-9)
        for case in range(100):
            crng = np.random.default_rng(1000 + case)
            delta = crng.normal(size=(4, 6))
            g = crng.normal(size=(4, 6))
            eps = float(crng.uniform(0.1, 2.0))
            eta = float(crng.uniform(0.01, 0.5))
            a = vat.ascent_step_pgd(delta, g, eta, eps)
            b = vat.ascent_step_pnm(delta, g, np.ones_like(delta), eta, eps)
            assert np.array_equal(a, b)


def test_criterion_4_lora_accounting():
    with criterion(4, "fresh adapters are exact; counts match; base frozen over training"):
        cfg, params, _, pairs = tiny_setup(dtype=np.float32)
        fresh = lora.AdapterSet.create(cfg, rank=2, rng=component_rng(1, "fresh"))
        emb = model.embed(pairs[0], params, cfg)
        base, _ = model.forward(emb, params, cfg, want_trace=False)
        adapted, _ = model.forward(emb, params, cfg, adapters=fresh, want_trace=False)
        np.testing.assert_array_equal(base, adapted)

        big = model.ModelConfig(vocab_size=70, dim=64, layers=2, heads=4, ff_dim=256)
        for r in (1, 2, 4, 8):
            trainable, full = lora.trainable_count(big, r)
            assert trainable == 2 * big.layers * r * 2 * big.dim
            if r < big.dim / 2:
                assert trainable < full

        snapshot = {k: t.copy() for k, t in params.items()}
        vcfg = vat.VATConfig(epochs=100, pgd_epochs=50, batch_size=6)
        adapters = lora.AdapterSet.create(cfg, rank=2, rng=component_rng(2, "tr"))
        vat.train(pairs, params, cfg, adapters, vcfg,
                  shuffle_rng=component_rng(2, "s"),
                  delta_rng=component_rng(2, "d"),
                  hessian_rng=component_rng(2, "h"))
        for name, t in params.items():
            np.testing.assert_array_equal(t, snapshot[name])


def test_criterion_5_constrained_ascent_oracle():
    with criterion(5, "PGD reaches the boundary optimum; Newton needs strictly fewer steps"):
        # isotropic loss, optimum outside the ball: closed-form boundary point
        rng = np.random.default_rng(55)
        c = rng.normal(size=(4, 4))
        c *= 3.0 / vat.frob(c)
        eps = 1.0
        target = eps * c / vat.frob(c)
        delta = np.zeros_like(c)
        steps_to_target = None
        for it in range(1, 201):
            delta = vat.ascent_step_pgd(delta, 2.0 * (c - delta), 0.1, eps)
            if vat.frob(delta - target) < 1e-3:
                steps_to_target = it
                break
        assert steps_to_target is not None, "PGD did not reach the boundary optimum"

        # diagonal quadratic with interior optimum: count iterations to 1e-3
        d = 16
        D = np.logspace(0, 2, d)
        c2 = rng.normal(size=(1, d))
        c2 *= 0.5 / vat.frob(c2)

        def run(step_fn, cap=5000):
            cur = np.zeros_like(c2)
            for it in range(1, cap + 1):
                g = D * (c2 - cur)
                cur = step_fn(cur, g)
                if vat.frob(cur - c2) < 1e-3:
                    return it
            return cap + 1

        eta = 0.02
        it_pgd = run(lambda dl, g: vat.ascent_step_pgd(dl, g, eta, 1.0))
        it_pnm = run(lambda dl, g: vat.ascent_step_pnm(
            dl, g, np.broadcast_to(D, dl.shape), eta, 1.0))
        assert it_pnm < it_pgd, f"newton {it_pnm} vs pgd {it_pgd}"


def test_criterion_6_metric_oracles():
    with criterion(6, "edit-rate equals exhaustive search; BLEU identities exact"):
        alphabet = "abc"
        # complete enumeration for short sequences
        short = [seq for ln in range(0, 4) for seq in itertools.product(alphabet, repeat=ln)]
        for cand in short:
            for ref in short:
                if not ref:
                    continue
                got = metrics.ter(cand, ref)
                want = exhaustive_ter(cand, ref)
                assert got == pytest.approx(want), (cand, ref)
        # seeded sample of longer pairs up to length 6
        rng = np.random.default_rng(606)
        for _ in range(120):
            nc = int(rng.integers(0, 7))
            nr = int(rng.integers(1, 7))
            cand = tuple(alphabet[i] for i in rng.integers(0, 3, nc))
            ref = tuple(alphabet[i] for i in rng.integers(0, 3, nr))
            assert metrics.ter(cand, ref) == pytest.approx(exhaustive_ter(cand, ref)), \
                (cand, ref)

        for toks in (["a"], "a b".split(), "a b c a".split()):
            assert metrics.bleu(toks, [toks]) == pytest.approx(1.0, abs=1e-12)
            assert metrics.ter(toks, toks) == 0.0
        for _ in range(300):
            nc = int(rng.integers(1, 7))
            cand = [alphabet[i] for i in rng.integers(0, 3, nc)]
            ref = [alphabet[i] for i in rng.integers(0, 3, int(rng.integers(1, 7)))]
            inp = [alphabet[i] for i in rng.integers(0, 3, int(rng.integers(1, 7)))]
            alpha = 0.7
            lhs = metrics.ibleu(cand, [ref], inp, alpha=alpha)
            rhs = alpha * metrics.bleu(cand, [ref]) \
                - (1.0 - alpha) * metrics.self_bleu(cand, inp)
            assert lhs == rhs  # identical float expressions recompose exactly
        got = metrics.bleu("the cat sat".split(), ["the cat sat down".split()])
        assert abs(got - math.exp(1.0 - 4.0 / 3.0)) < 1e-9


# ---------------------------------------------------------------------------
# End-to-end criteria
# ---------------------------------------------------------------------------

COPY_SEED = 0


@pytest.fixture(scope="module")
def copy_task_run():
    """Full desk-scale reconstruction training used by criterion 7."""
    start = time.monotonic()
    lines = copy_corpus(COPY_SEED, 2000)
    held, train_lines = lines[:100], lines[100:]
    vocab = corpus.build_vocab(lines, "whitespace", max_size=70)
    cc = corpus.CorruptionConfig(shuffle_prob=0.0, seed=COPY_SEED)
    crng = component_rng(COPY_SEED, "corrupt")
    sw = corpus.StopwordSet()
    pairs = [corpus.pack(p, vocab, 32)
             for p in corpus.make_pairs(train_lines, vocab, sw, cc, crng)]
    held_pairs = [corpus.pack(p, vocab, 32)
                  for p in corpus.make_pairs(held, vocab, sw, cc, crng)]

    mcfg = model.ModelConfig(vocab_size=70, dim=64, layers=2, heads=4,
                             ff_dim=256, max_len=32)
    params = model.init_parameters(mcfg, component_rng(COPY_SEED, "init"))
    adapters = lora.AdapterSet.create(mcfg, rank=4,
                                      rng=component_rng(COPY_SEED, "lora"), alpha=32.0)
    vcfg = vat.VATConfig(epochs=30, pgd_epochs=15, batch_size=4, seed=COPY_SEED)
    vat.train(pairs, params, mcfg, adapters, vcfg,
              shuffle_rng=component_rng(COPY_SEED, "train/shuffle"),
              delta_rng=component_rng(COPY_SEED, "train/delta"),
              hessian_rng=component_rng(COPY_SEED, "train/hessian"))
    elapsed = time.monotonic() - start
    return mcfg, params, adapters, vocab, held_pairs, elapsed


def test_criterion_7_copy_task_accuracy(copy_task_run):
    with criterion(7, "held-out reconstruction: tokens >= 0.90, exact >= 0.60, <= 15 min"):
        mcfg, params, adapters, vocab, held_pairs, elapsed = copy_task_run
        dc = decode.DecodeConfig(strategy="greedy", max_new_tokens=14)
        tok = tot = exact = 0
        for pk in held_pairs:
            src, tgt = pk.unpack()
            out = decode.generate(params, mcfg, adapters,
                                  list(src) + [corpus.SEP_ID], dc,
                                  vocab_limit=len(vocab))
            tgt = list(tgt)
            tot += len(tgt)
            tok += sum(1 for i in range(len(tgt))
                       if i < len(out) and out[i] == tgt[i])
            exact += int(out == tgt)
        token_acc = tok / tot
        exact_acc = exact / len(held_pairs)
        print(f"  [copy task] token accuracy {token_acc:.4f}, "
              f"exact match {exact_acc:.4f}, train time {elapsed:.0f}s")
        assert token_acc >= 0.90, f"token accuracy {token_acc:.4f}"
        assert exact_acc >= 0.60, f"exact match {exact_acc:.4f}"
        assert elapsed <= 15 * 60, f"training took {elapsed:.0f}s"


def _write_corpus(path: Path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


DIVERSITY_CONFIG = """[model]
vocab_size = 70
dim = 32
layers = 2
heads = 4
ff_dim = 64
max_len = 32

[lora]
rank = 4
alpha = 32.0

[vat]
epochs = 2
pgd_epochs = 1
batch_size = 8
alpha = {alpha}

[corruption]
shuffle_prob = 0.33
lang = en

[decode]
strategy = greedy
max_new_tokens = 14

[paths]
corpus = {corpus}

[run]
seed = 1
"""


def test_criterion_8_diversity_report(tmp_path):
    with criterion(8, "smoothing on/off runs both report diversity columns"):
        lines = copy_corpus(1, 200)
        corpus_path = tmp_path / "corpus.txt"
        _write_corpus(corpus_path, lines)
        eval_path = tmp_path / "eval.jsonl"
        eval_path.write_text(
            "\n".join(json.dumps({"input": ln, "lang": "en"}) for ln in lines[:12]),
            encoding="utf-8")

        summaries = {}
        for label, alpha in (("vat", 1.0), ("novat", 0.0)):
            cfg_path = tmp_path / f"{label}.cfg"
            cfg_path.write_text(DIVERSITY_CONFIG.format(alpha=alpha, corpus=corpus_path),
                                encoding="utf-8")
            out_dir = tmp_path / label
            assert cli.main(["train", "--config", str(cfg_path),
                             "--out", str(out_dir)]) == 0
            prefix = tmp_path / f"report_{label}"
            assert cli.main(["evaluate", "--checkpoint", str(out_dir / "final.ckpt"),
                             "--eval-set", str(eval_path), "--out", str(prefix)]) == 0
            rows = list(csv.DictReader(open(f"{prefix}.summary.csv")))
            assert rows, "no summary rows"
            summaries[label] = rows[0]

        combined = tmp_path / "diversity_report.txt"
        header = ["run", "self_bleu", "self_ter", "parascore_proxy"]
        table_lines = ["  ".join(h.ljust(16) for h in header)]
        for label, row in summaries.items():
            for col in ("self_bleu", "self_ter", "parascore_proxy"):
                assert row[col] != "", f"{label}: {col} column missing"
            table_lines.append("  ".join([
                label.ljust(16),
                f"{100 * float(row['self_bleu']):.2f}".ljust(16),
                f"{100 * float(row['self_ter']):.2f}".ljust(16),
                f"{100 * float(row['parascore_proxy']):.2f}".ljust(16)]))
        combined.write_text("\n".join(table_lines) + "\n", encoding="utf-8")
        rendered = combined.read_text(encoding="utf-8").splitlines()
        assert len(rendered) == 3  # header plus one row per run
        print("  [diversity] " + " | ".join(rendered[1:]))


DETERMINISM_CONFIG = """[model]
vocab_size = 24
dim = 16
layers = 2
heads = 4
ff_dim = 32
max_len = 32

[lora]
rank = 2
alpha = 16.0

[vat]
epochs = 1
pgd_epochs = 0
batch_size = 4
ascent_steps = 2

[corruption]
shuffle_prob = 0.33
lang = en

[decode]
strategy = greedy
max_new_tokens = 10

[paths]
corpus = {corpus}

[run]
seed = 11
"""


def test_criterion_9_determinism_and_persistence(tmp_path):
    with criterion(9, "seeded reruns byte-identical; checkpoint round-trip bit-exact"):
        rng = np.random.default_rng(9)
        words = [f"w{i}" for i in range(12)]
        lines = [" ".join(words[i] for i in rng.choice(12, size=4, replace=False))
                 for _ in range(20)]
        corpus_path = tmp_path / "c.txt"
        _write_corpus(corpus_path, lines)
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(DETERMINISM_CONFIG.format(corpus=corpus_path),
                            encoding="utf-8")

        outs = []
        for run in ("r1", "r2"):
            out_dir = tmp_path / run
            assert cli.main(["train", "--config", str(cfg_path),
                             "--out", str(out_dir)]) == 0
            outs.append(out_dir)
        assert (outs[0] / "final.ckpt").read_bytes() == (outs[1] / "final.ckpt").read_bytes()
        assert (outs[0] / "history.csv").read_bytes() == (outs[1] / "history.csv").read_bytes()

        ckpt = outs[0] / "final.ckpt"
        inp = tmp_path / "in.txt"
        inp.write_text("w1 w2 w3\nw4 w5 w6\n", encoding="utf-8")
        paras = []
        for name in ("p1.txt", "p2.txt"):
            out = tmp_path / name
            assert cli.main(["paraphrase", "--checkpoint", str(ckpt),
                             "--input", str(inp), "--out", str(out)]) == 0
            paras.append(out.read_bytes())
        assert paras[0] == paras[1]

        eval_path = tmp_path / "eval.jsonl"
        eval_path.write_text(json.dumps({"input": "w1 w2 w3", "lang": "en"}) + "\n",
                             encoding="utf-8")
        reports = []
        for name in ("e1", "e2"):
            prefix = tmp_path / name
            assert cli.main(["evaluate", "--checkpoint", str(ckpt),
                             "--eval-set", str(eval_path), "--out", str(prefix)]) == 0
            reports.append(Path(f"{prefix}.summary.csv").read_bytes()
                           + Path(f"{prefix}.records.csv").read_bytes())
        assert reports[0] == reports[1]

        # save -> load -> save byte identity
        loaded = load_checkpoint(ckpt)
        resaved = tmp_path / "resaved.ckpt"
        save_checkpoint(resaved, loaded.config_text, loaded.vocab_text,
                        loaded.params, loaded.adapters, loaded.history)
        assert resaved.read_bytes() == ckpt.read_bytes()
        for name, t in load_checkpoint(resaved).params.items():
            np.testing.assert_array_equal(t, loaded.params[name])
