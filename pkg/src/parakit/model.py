"""A small decoder-only transformer with exact handwritten gradients.

The forward pass caches every intermediate needed for reverse mode, so
``backward`` returns exact gradients with respect to all weight tensors, the
low-rank adapter factors, and an additive perturbation on the input
embeddings.  Everything runs on plain numpy arrays; float32 is the training
dtype and float64 is available for finite-difference verification.

Conventions: activations are row matrices (sequence length n by model dim d)
and weights multiply on the right, ``y = x @ W``.  The output head is tied to
the embedding table, ``logits = y @ E.T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

from .corpus import PackedSequence
from .errors import EmptyLossMask, ShapeError, TraceMismatch, VocabOverflow

LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Configuration and parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ff_dim: int = 256
    max_len: int = 64
    dropout: float = 0.0
    # Initialization family.  "scaffold" stands in for a pretrained base: it
    # plants generic previous-token and token-matching attention kernels in
    # separated residual channels, the structure adapters can steer but not
    # build at low rank.  "gaussian" is plain scaled-normal init.
    init_scheme: str = "scaffold"
    emb_std: float = 0.5
    pos_scale: float = 0.8
    ff_std: float = 0.01

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def pos_width(self) -> int | None:
        """Columns carrying position signal; None means the full table."""
        if self.init_scheme != "scaffold":
            return None
        return _scaffold_layout(self.dim)[0]

    def validate(self) -> None:
        if min(self.vocab_size, self.dim, self.layers, self.heads, self.ff_dim, self.max_len) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        if self.dropout != 0.0:
            raise ValueError("dropout is fixed at 0 at this scale")
        if self.init_scheme not in ("scaffold", "gaussian"):
            raise ValueError(f"unknown init scheme {self.init_scheme!r}")
        if self.init_scheme == "scaffold" and self.dim % 4 != 0:
            raise ValueError("scaffold init needs dim divisible by 4")


def parameter_names(config: ModelConfig) -> list[str]:
    """Canonical tensor ordering used by init, checkpointing, and tests."""
    names = ["embed"]
    for i in range(config.layers):
        p = f"layers.{i}."
        names += [p + s for s in (
            "ln1.g", "ln1.b", "wq", "wk", "wv", "wo",
            "ln2.g", "ln2.b", "w1", "b1", "w2", "b2",
        )]
    names += ["lnf.g", "lnf.b"]
    return names


def _position_shift(d: int) -> np.ndarray:
    """Rotation S with ``pos_p @ S == pos_{p-1}`` for the sinusoid table.

    Each (sin, cos) frequency pair rotates by its own angle, so the map is
    exact for every position at once.
    """
    shift = np.zeros((d, d))
    idx = np.arange(0, d, 2, dtype=np.float64)
    omegas = 1.0 / np.power(10000.0, idx / d)
    for i, w in enumerate(omegas):
        s, c = math.sin(w), math.cos(w)
        a, b = 2 * i, 2 * i + 1
        if b >= d:
            shift[a, a] = c
            break
        shift[a, a] = c
        shift[a, b] = s
        shift[b, a] = -s
        shift[b, b] = c
    return shift


def _scaffold_layout(d: int) -> tuple[int, int]:
    """(position coords, content coords) for the channel split 1/4 : 3/8 : 3/8.

    The residual stream is partitioned into a position band, a raw-content
    band holding the token embeddings, and a staging band that attention
    writes shifted content into.
    """
    n_pos = max(2, (d // 4) & ~1)
    n_c = (d - n_pos) // 2
    return n_pos, n_c


# Gains of the scaffold blocks, tuned once on reconstruction tasks and fixed.
_SCAFFOLD_GAINS = {
    "prev": 2.0,     # one-step-back position kernel in even layers
    "write": 1.2,    # content transfer into the staging band
    "match": 2.6,    # query(raw) / key(staged) token-matching kernel
    "read": 3.2,     # matched content returned to the raw band
    "pos_key": 1.0,  # key-side position subchannel for adapter-built queries
    "start_q": 0.6,  # weak delimiter-conditioned query toward position 0
    "start_v": 1.6,  # start heads' content readback
    "eos_v": 0.8,    # weak delimiter-content to end-token readout
}


def init_parameters(
    config: ModelConfig, rng: np.random.Generator, dtype=np.float32
) -> dict[str, np.ndarray]:
    """Fresh weight tensors for ``config``.

    The scaffold scheme plays the role of a pretrained checkpoint at desk
    scale.  Even layers hold a previous-position attention kernel whose
    values copy the raw-content band into a staging band one step later;
    odd layers match the current token's raw content against the staged
    (shifted) content and read the matched position's raw content back out,
    where the tied output head can see it.  All of this is generic
    next-token machinery; the low-rank adapters steer it (sharpening the
    kernels and adding delimiter-conditioned behavior) but cannot build the
    full-rank token-matching structure themselves.
    """
    config.validate()
    d, ff = config.dim, config.ff_dim
    p: dict[str, np.ndarray] = {}
    if config.init_scheme == "scaffold":
        n_pos, n_c = _scaffold_layout(d)
        emb = np.zeros((config.vocab_size, d))
        emb[:, n_pos : n_pos + n_c] = rng.normal(0.0, config.emb_std, (config.vocab_size, n_c))
        p["embed"] = emb
    else:
        p["embed"] = rng.normal(0.0, config.emb_std, size=(config.vocab_size, d))
    for i in range(config.layers):
        pref = f"layers.{i}."
        p[pref + "ln1.g"] = np.ones(d)
        p[pref + "ln1.b"] = np.zeros(d)
        if config.init_scheme == "scaffold":
            wq, wk, wv, wo = _scaffold_attention(config, i, rng, p["embed"])
            p[pref + "wq"] = wq
            p[pref + "wk"] = wk
            p[pref + "wv"] = wv
            p[pref + "wo"] = wo
        else:
            std = 1.0 / math.sqrt(d)
            for nm in ("wq", "wk", "wv", "wo"):
                p[pref + nm] = rng.normal(0.0, std, size=(d, d))
        p[pref + "ln2.g"] = np.ones(d)
        p[pref + "ln2.b"] = np.zeros(d)
        p[pref + "w1"] = rng.normal(0.0, config.ff_std, size=(d, ff))
        p[pref + "b1"] = np.zeros(ff)
        p[pref + "w2"] = rng.normal(0.0, config.ff_std / math.sqrt(2 * config.layers),
                                    size=(ff, d))
        p[pref + "b2"] = np.zeros(d)
    p["lnf.g"] = np.ones(d)
    p["lnf.b"] = np.zeros(d)
    return {k: np.ascontiguousarray(v, dtype=dtype) for k, v in p.items()}


def _scaffold_attention(config: ModelConfig, layer: int, rng: np.random.Generator,
                        emb_table: np.ndarray):
    """Attention projections for one scaffold layer (see init_parameters)."""
    d, h = config.dim, config.heads
    dh = config.head_dim
    n_pos, n_c = _scaffold_layout(d)
    c0 = n_pos           # raw-content band start
    b0 = n_pos + n_c     # staging band start
    g = _SCAFFOLD_GAINS
    active = list(range(min(2, h)))
    starters = [hh for hh in (2, 3) if hh < h] if layer % 2 == 1 else []
    wq = np.zeros((d, d))
    wk = np.zeros((d, d))
    wv = np.zeros((d, d))
    wo = np.zeros((d, d))

    def spread_content(heads: list[int], gain: float, dst0: int) -> None:
        # Content is wider than one head, so split it across the given
        # heads' value slots and reassemble contiguously at dst0.
        done = 0
        for hh in heads:
            take = min(dh, n_c - done)
            if take <= 0:
                break
            wv[c0 + done : c0 + done + take, hh * dh : hh * dh + take] += gain * np.eye(take)
            wo[hh * dh : hh * dh + take, dst0 + done : dst0 + done + take] += gain * np.eye(take)
            done += take

    def content_dir(token_id: int) -> np.ndarray:
        vec = emb_table[token_id, c0 : c0 + n_c].astype(np.float64)
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    if layer % 2 == 0:
        shift = _position_shift(d)[:n_pos, :n_pos]
        for hh in active:
            sl = hh * dh
            m = min(n_pos, dh)
            wk[0:m, sl : sl + m] += g["prev"] * np.eye(m)
            wq[0:n_pos, sl : sl + m] += g["prev"] * shift[:, :m]
        spread_content(active, g["write"], b0)
    else:
        sub = min(8, max(dh // 2, 2)) if dh > 4 else 0  # key-side position dims
        for idx, hh in enumerate(active):
            sl = hh * dh
            n_match = dh - sub if (sub and idx == len(active) - 1) else dh
            lam = np.linalg.qr(rng.standard_normal((n_c, n_c)))[0][:, : min(n_match, n_c)]
            cols = lam.shape[1]
            wq[c0 : c0 + n_c, sl : sl + cols] += g["match"] * lam
            wk[b0 : b0 + n_c, sl : sl + cols] += g["match"] * lam
            if sub and idx == len(active) - 1:
                m = min(sub, n_pos)
                wk[0:m, sl + n_match : sl + n_match + m] += g["pos_key"] * np.eye(m)
        spread_content(active, g["read"], c0)

        if starters:
            # Start heads: keys expose position only, values carry full raw
            # content, and a weak delimiter-conditioned query points at
            # position 0 (the first token after the prompt has no staged
            # predecessor to match, so it must be fetched by position).
            m = min(8, n_pos)
            pos0 = sinusoidal_positions(1, d)[0, :m]
            sep_dir = content_dir(1)  # separator token id
            for hh in starters:
                sl = hh * dh
                wk[0:m, sl : sl + m] += g["pos_key"] * np.eye(m)
                wq[c0 : c0 + n_c, sl : sl + m] += g["start_q"] * np.outer(sep_dir, pos0)
            spread_content(starters, g["start_v"], c0)
            # Matching the staged delimiter content marks the final target
            # position; nudge its readout toward the end token.
            eos_dir = content_dir(2) * g["eos_v"]
            done = 0
            for hh in active:
                take = min(dh, n_c - done)
                if take <= 0:
                    break
                wv[c0 : c0 + n_c, hh * dh : hh * dh + take] += np.outer(
                    sep_dir, eos_dir[done : done + take])
                done += take
    return wq, wk, wv, wo


def sinusoidal_positions(n: int, d: int, scale: float = 1.0) -> np.ndarray:
    """Fixed sine/cosine position table, float64."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    idx = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, idx / d)
    table = np.zeros((n, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    ncos = table[:, 1::2].shape[1]
    table[:, 1::2] = np.cos(angles[:, :ncos])
    return scale * table


def _token_ids(tokens) -> np.ndarray:
    ids = getattr(tokens, "tokens", None)
    if ids is None:
        ids = getattr(tokens, "ids", tokens)
    return np.asarray(ids, dtype=np.int64)


def embed(tokens, params: dict[str, np.ndarray], config: ModelConfig) -> np.ndarray:
    """Token embeddings plus sinusoidal positions, shape (n, dim)."""
    ids = _token_ids(tokens)
    E = params["embed"]
    if ids.size and int(ids.max()) >= E.shape[0]:
        raise VocabOverflow(f"token id {int(ids.max())} >= vocab size {E.shape[0]}")
    pos = sinusoidal_positions(len(ids), config.dim, config.pos_scale)
    if config.pos_width is not None:
        pos[:, config.pos_width :] = 0.0
    return E[ids] + pos.astype(E.dtype)


# ---------------------------------------------------------------------------
# Activation helpers
# ---------------------------------------------------------------------------

def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(LN_EPS, dtype=x.dtype))
    xhat = xc * inv
    return g * xhat + b, xhat, inv


def _layer_norm_back(dout, xhat, inv, g):
    dg = (dout * xhat).sum(axis=0)
    db = dout.sum(axis=0)
    dxhat = dout * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return cdf + x * pdf


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _to_heads(x: np.ndarray, h: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, h, d // h).transpose(1, 0, 2)


def _from_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

@dataclass
class LayerTrace:
    x_in: np.ndarray
    xhat1: np.ndarray
    inv1: np.ndarray
    a: np.ndarray
    wq_eff: np.ndarray
    wv_eff: np.ndarray
    q: np.ndarray           # (heads, n, head_dim)
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray       # (heads, n, n)
    o: np.ndarray           # (n, dim), pre output projection
    x_mid: np.ndarray
    xhat2: np.ndarray
    inv2: np.ndarray
    bact: np.ndarray
    f1: np.ndarray
    u: np.ndarray


@dataclass
class ForwardTrace:
    """Cached activations from one forward pass; consumed by ``backward``.

    Holds references (not copies) to the parameter dict and adapter set used
    in the forward call, so the backward pass sees exactly the same weights.
    """

    config: ModelConfig
    params: dict[str, np.ndarray]
    layers: list[LayerTrace]
    xhatf: np.ndarray
    invf: np.ndarray
    final_hidden: np.ndarray
    logits: np.ndarray
    adapters: Optional[object] = None


def forward(
    embeddings: np.ndarray,
    params: dict[str, np.ndarray],
    config: ModelConfig,
    perturbation: np.ndarray | None = None,
    adapters=None,
    want_trace: bool = True,
):
    """Run the causal transformer on (embeddings + perturbation).

    Returns ``(logits, trace)``; ``trace`` is None when ``want_trace`` is
    False.  When an adapter set is supplied, the query and value projections
    use their adapted effective weights.
    """
    n, d = embeddings.shape
    if d != config.dim:
        raise ShapeError(f"embeddings have dim {d}, model has {config.dim}")
    if perturbation is not None:
        if perturbation.shape != embeddings.shape:
            raise ShapeError(
                f"perturbation shape {perturbation.shape} != embeddings {embeddings.shape}")
        x = embeddings + perturbation
    else:
        x = embeddings.copy()

    h = config.heads
    scale = np.asarray(1.0 / math.sqrt(config.head_dim), dtype=x.dtype)
    neg_inf = np.asarray(-np.inf, dtype=x.dtype)
    causal = np.triu(np.ones((n, n), dtype=bool), k=1)

    layer_traces: list[LayerTrace] = []
    for i in range(config.layers):
        pref = f"layers.{i}."
        a, xhat1, inv1 = _layer_norm(x, params[pref + "ln1.g"], params[pref + "ln1.b"])
        wq_eff = params[pref + "wq"]
        wv_eff = params[pref + "wv"]
        if adapters is not None:
            wq_eff = adapters.effective(i, "q", wq_eff)
            wv_eff = adapters.effective(i, "v", wv_eff)
        q = _to_heads(a @ wq_eff, h)
        k = _to_heads(a @ params[pref + "wk"], h)
        v = _to_heads(a @ wv_eff, h)
        scores = (q @ k.transpose(0, 2, 1)) * scale
        scores = np.where(causal, neg_inf, scores)
        probs = _softmax(scores)
        o = _from_heads(probs @ v)
        x_mid = x + o @ params[pref + "wo"]
        bact, xhat2, inv2 = _layer_norm(x_mid, params[pref + "ln2.g"], params[pref + "ln2.b"])
        f1 = bact @ params[pref + "w1"] + params[pref + "b1"]
        u = _gelu(f1)
        x_next = x_mid + u @ params[pref + "w2"] + params[pref + "b2"]
        if want_trace:
            layer_traces.append(LayerTrace(
                x_in=x, xhat1=xhat1, inv1=inv1, a=a, wq_eff=wq_eff, wv_eff=wv_eff,
                q=q, k=k, v=v, probs=probs, o=o, x_mid=x_mid,
                xhat2=xhat2, inv2=inv2, bact=bact, f1=f1, u=u,
            ))
        x = x_next

    y, xhatf, invf = _layer_norm(x, params["lnf.g"], params["lnf.b"])
    logits = y @ params["embed"].T
    if not want_trace:
        return logits, None
    trace = ForwardTrace(
        config=config, params=params, layers=layer_traces,
        xhatf=xhatf, invf=invf, final_hidden=y, logits=logits, adapters=adapters,
    )
    return logits, trace


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def loss_rec(logits: np.ndarray, packed: PackedSequence) -> float:
    """Mean next-token cross-entropy over the masked target positions."""
    loss, _ = _loss_rec_impl(logits, packed, want_grad=False)
    return loss


def loss_rec_with_grad(logits: np.ndarray, packed: PackedSequence):
    """As ``loss_rec`` but also returns d(loss)/d(logits)."""
    return _loss_rec_impl(logits, packed, want_grad=True)


def _loss_rec_impl(logits: np.ndarray, packed: PackedSequence, want_grad: bool):
    positions = np.nonzero(packed.loss_mask)[0]
    if positions.size == 0:
        raise EmptyLossMask("loss mask selects no positions")
    rows = positions - 1  # row i predicts position i+1
    targets = packed.tokens[positions]
    # non-finite logits surface as a non-finite loss, handled by callers
    with np.errstate(invalid="ignore", over="ignore"):
        logp = _log_softmax(logits[rows])
    picked = logp[np.arange(rows.size), targets]
    loss = float(-picked.mean())
    if not want_grad:
        return loss, None
    dlogits = np.zeros_like(logits)
    grad_rows = np.exp(logp)
    grad_rows[np.arange(rows.size), targets] -= 1.0
    dlogits[rows] = grad_rows / rows.size
    return loss, dlogits


def kl_div(logits_p: np.ndarray, logits_q: np.ndarray, mask: np.ndarray) -> float:
    """Mean KL(softmax(p) || softmax(q)) over masked rows; q is constant."""
    loss, _ = _kl_div_impl(logits_p, logits_q, mask, want_grad=False)
    return loss


def kl_div_with_grad(logits_p: np.ndarray, logits_q: np.ndarray, mask: np.ndarray):
    """As ``kl_div`` but also returns d(loss)/d(logits_p); none flows into q."""
    return _kl_div_impl(logits_p, logits_q, mask, want_grad=True)


def _kl_div_impl(logits_p, logits_q, mask, want_grad: bool):
    if logits_p.shape != logits_q.shape:
        raise ShapeError(f"logit shapes differ: {logits_p.shape} vs {logits_q.shape}")
    rows = np.nonzero(np.asarray(mask, dtype=bool))[0]
    if rows.size == 0:
        raise EmptyLossMask("mask selects no rows")
    # non-finite logits surface as a non-finite loss, handled by callers
    with np.errstate(invalid="ignore", over="ignore"):
        lp = _log_softmax(logits_p[rows])
        lq = _log_softmax(logits_q[rows])
        p = np.exp(lp)
        diff = lp - lq
        per_row = (p * diff).sum(axis=-1)
    loss = float(per_row.mean())
    if not want_grad:
        return loss, None
    # d/dz_k of sum_i p_i (lp_i - lq_i) = p_k (diff_k - KL_row)
    dlogits = np.zeros_like(logits_p)
    dlogits[rows] = p * (diff - per_row[:, None]) / rows.size
    return loss, dlogits


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

@dataclass
class Gradients:
    """Gradient blocks keyed like the tensors they correspond to."""

    params: dict[str, np.ndarray]
    adapters: dict[str, np.ndarray] = field(default_factory=dict)
    d_embeddings: np.ndarray | None = None


def backward(trace: ForwardTrace, dlogits: np.ndarray) -> Gradients:
    """Reverse-mode gradients of a scalar loss given d(loss)/d(logits).

    Returns gradients for every weight tensor, every adapter factor used in
    the forward pass (keyed ``"<layer>.<q|v>.<A|B>"``), and the input
    embedding matrix, which equals the gradient with respect to an additive
    perturbation.
    """
    if trace is None:
        raise TraceMismatch("forward was run without a trace")
    if dlogits.shape != trace.logits.shape:
        raise TraceMismatch(
            f"dlogits shape {dlogits.shape} does not match trace {trace.logits.shape}")
    cfg = trace.config
    params = trace.params
    adapters = trace.adapters
    gp: dict[str, np.ndarray] = {}
    ga: dict[str, np.ndarray] = {}

    # Tied output head: logits = y @ E.T
    gp["embed"] = dlogits.T @ trace.final_hidden
    dy = dlogits @ params["embed"]
    dx, dgf, dbf = _layer_norm_back(dy, trace.xhatf, trace.invf, params["lnf.g"])
    gp["lnf.g"] = dgf
    gp["lnf.b"] = dbf

    scale = 1.0 / math.sqrt(cfg.head_dim)
    for i in reversed(range(cfg.layers)):
        lt = trace.layers[i]
        pref = f"layers.{i}."

        # Feed-forward block: x_next = x_mid + gelu(ln2(x_mid) @ w1 + b1) @ w2 + b2
        df2 = dx
        gp[pref + "w2"] = lt.u.T @ df2
        gp[pref + "b2"] = df2.sum(axis=0)
        du = df2 @ params[pref + "w2"].T
        df1 = du * _gelu_grad(lt.f1)
        gp[pref + "w1"] = lt.bact.T @ df1
        gp[pref + "b1"] = df1.sum(axis=0)
        dbact = df1 @ params[pref + "w1"].T
        dx_mid, dg2, db2 = _layer_norm_back(dbact, lt.xhat2, lt.inv2, params[pref + "ln2.g"])
        gp[pref + "ln2.g"] = dg2
        gp[pref + "ln2.b"] = db2
        dx_mid = dx_mid + dx  # residual skip around the feed-forward

        # Attention block: x_mid = x_in + (softmax(qk/sqrt) @ v | heads) @ wo
        dattn = dx_mid
        gp[pref + "wo"] = lt.o.T @ dattn
        do = _to_heads(dattn @ params[pref + "wo"].T, cfg.heads)
        dprobs = do @ lt.v.transpose(0, 2, 1)
        dv = lt.probs.transpose(0, 2, 1) @ do
        dscores = lt.probs * (dprobs - (dprobs * lt.probs).sum(axis=-1, keepdims=True))
        dq = (dscores @ lt.k) * scale
        dk = (dscores.transpose(0, 2, 1) @ lt.q) * scale

        dQ = _from_heads(dq)
        dK = _from_heads(dk)
        dV = _from_heads(dv)
        dwq_eff = lt.a.T @ dQ
        dwv_eff = lt.a.T @ dV
        gp[pref + "wq"] = dwq_eff
        gp[pref + "wk"] = lt.a.T @ dK
        gp[pref + "wv"] = dwv_eff
        if adapters is not None:
            for target, dW in (("q", dwq_eff), ("v", dwv_eff)):
                ad = adapters.get(i, target)
                ga[f"{i}.{target}.A"] = ad.scaling * (ad.b.T @ dW)
                ga[f"{i}.{target}.B"] = ad.scaling * (dW @ ad.a.T)
        da = dQ @ lt.wq_eff.T + dK @ params[pref + "wk"].T + dV @ lt.wv_eff.T
        dx_in, dg1, db1 = _layer_norm_back(da, lt.xhat1, lt.inv1, params[pref + "ln1.g"])
        gp[pref + "ln1.g"] = dg1
        gp[pref + "ln1.b"] = db1
        dx = dx_in + dx_mid  # residual skip into the layer input

    return Gradients(params=gp, adapters=ga, d_embeddings=dx)


def add_embedding_lookup_grad(grads: Gradients, tokens) -> None:
    """Scatter d(loss)/d(embeddings) into the embedding-table gradient.

    The tied-head contribution is already in ``grads.params['embed']``; this
    adds the lookup path so the total matches a finite-difference probe of
    the table.
    """
    ids = _token_ids(tokens)
    np.add.at(grads.params["embed"], ids, grads.d_embeddings)
