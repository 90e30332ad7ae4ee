"""Virtual adversarial training with projected ascent on an embedding perturbation.

Each minibatch runs K inner ascent steps on a per-sequence perturbation of
the input embeddings, maximizing the divergence between the perturbed output
distribution and the model's own clean output distribution (the virtual
label).  Parameter gradients of the combined loss are averaged over the K
perturbed points and applied to the adapter factors in a single plain-SGD
step; the base weights never change.

Ascent uses normalized projected gradient steps for the first ``pgd_epochs``
epochs and a damped diagonal-Newton preconditioner afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import PackedSequence
from .errors import DivergenceDetected, HessianEstimateFailed
from .lora import AdapterSet
from .model import (
    ModelConfig,
    backward,
    embed,
    forward,
    kl_div,
    kl_div_with_grad,
    loss_rec_with_grad,
)

_ZERO_GRAD_TOL = 1e-12
_MAX_ETA_HALVINGS = 3


@dataclass(frozen=True)
class VATConfig:
    """Knobs of the adversarial trainer.

    ``pgd_epochs`` (the PGD/Newton switch point) defaults to half the epoch
    budget when left unset.
    """

    epsilon: float = 1.0        # perturbation bound, Frobenius norm units
    tau: float = 1e-3           # global learning rate
    alpha: float = 1.0          # smoothing proportion on the adversarial term
    eta: float = 0.1            # ascent step size
    ascent_steps: int = 3       # K
    epochs: int = 10            # N
    pgd_epochs: Optional[int] = None   # e*; epochs <= e* use PGD, later ones Newton
    gamma: float = 0.1          # init scale
    sigma: float = 1.0          # init std
    damping: float = 1e-3       # diagonal-Newton floor
    seed: int = 0
    batch_size: int = 8
    hessian_probes: int = 1

    def resolved_pgd_epochs(self) -> int:
        return self.epochs // 2 if self.pgd_epochs is None else self.pgd_epochs

    def validate(self) -> None:
        if self.epsilon <= 0 or self.tau <= 0 or self.eta <= 0:
            raise ValueError("epsilon, tau, and eta must be positive")
        if self.ascent_steps < 1:
            raise ValueError("ascent_steps must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        e_star = self.resolved_pgd_epochs()
        if not 0 <= e_star <= max(self.epochs, 0):
            raise ValueError("pgd_epochs must lie in [0, epochs]")
        if self.gamma < 0 or self.sigma <= 0 or self.damping <= 0 or self.alpha < 0:
            raise ValueError("gamma >= 0, sigma > 0, damping > 0, alpha >= 0 required")
        if self.batch_size < 1 or self.hessian_probes < 1:
            raise ValueError("batch_size and hessian_probes must be >= 1")


# ---------------------------------------------------------------------------
# Perturbation primitives
# ---------------------------------------------------------------------------

def frob(x: np.ndarray) -> float:
    return float(math.sqrt(np.sum(x * x)))


def project_ball(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Scale ``delta`` back onto the Frobenius ball of radius ``epsilon``."""
    norm = frob(delta)
    if norm <= epsilon:
        return delta
    return delta * (epsilon / norm)


def init_perturbation(
    n: int, d: int, gamma: float, sigma: float,
    rng: np.random.Generator, epsilon: float | None = None,
) -> np.ndarray:
    """gamma-scaled Gaussian noise, optionally projected into the epsilon ball."""
    delta = gamma * rng.normal(0.0, sigma, size=(n, d))
    if epsilon is not None:
        delta = project_ball(delta, epsilon)
    return delta


def ascent_step_pgd(delta: np.ndarray, g_adv: np.ndarray, eta: float, epsilon: float) -> np.ndarray:
    """Normalized gradient ascent step followed by ball projection.

    A vanishing gradient direction skips the step entirely.
    """
    gnorm = frob(g_adv)
    if gnorm < _ZERO_GRAD_TOL:
        return delta
    return project_ball(delta + eta * (g_adv / gnorm), epsilon)


def ascent_step_pnm(
    delta: np.ndarray, g_adv: np.ndarray, hess_diag: np.ndarray,
    eta: float, epsilon: float,
) -> np.ndarray:
    """Diagonally preconditioned ascent step, projected back onto the ball.

    The preconditioner shapes the direction only; the feasible set is the
    same epsilon ball as the plain-gradient phase, so switching phases never
    changes the perturbation budget (and the H-weighted norm obeys
    ``|delta|_H <= epsilon * sqrt(max H)`` automatically).  With a unit
    preconditioner this reproduces ``ascent_step_pgd`` bit for bit, since
    dividing by 1.0 is an exact no-op.
    """
    gnorm = frob(g_adv)
    if gnorm < _ZERO_GRAD_TOL:
        return delta
    stepped = delta + eta * ((g_adv / gnorm) / hess_diag)
    return project_ball(stepped, epsilon)


def estimate_hessian_diag(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    delta: np.ndarray,
    probes: int,
    rng: np.random.Generator,
    mu: float = 1e-3,
    damping: float = 1e-3,
    g0: np.ndarray | None = None,
) -> np.ndarray:
    """Hutchinson-style diagonal curvature estimate of the adversarial loss.

    Averages ``z * (grad(delta + mu z) - grad(delta)) / mu`` over Rademacher
    probes ``z``, then clamps absolute values to at least ``damping`` so the
    preconditioner stays invertible.  ``grad_fn`` maps a perturbation to the
    adversarial-loss gradient; ``g0`` may supply the already-computed
    gradient at ``delta``.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    base = grad_fn(delta) if g0 is None else g0
    acc = np.zeros_like(delta, dtype=np.float64)
    for _ in range(probes):
        z = rng.integers(0, 2, size=delta.shape).astype(np.float64) * 2.0 - 1.0
        g_probe = grad_fn(delta + mu * z.astype(delta.dtype))
        acc += z * (np.asarray(g_probe, dtype=np.float64) - base) / mu
    est = np.abs(acc / probes)
    if not np.all(np.isfinite(est)):
        raise HessianEstimateFailed("non-finite curvature estimate")
    return np.maximum(est, damping).astype(delta.dtype)


# ---------------------------------------------------------------------------
# Minibatch step
# ---------------------------------------------------------------------------

@dataclass
class StepReport:
    epoch: int
    step: int
    loss_rec: float
    loss_vadv: float
    delta_norm: float
    grad_norm: float
    phase: str
    # batch-mean adversarial loss at each ascent step; monotone by the
    # eta-halving safeguard (diagnostic only, not a history column)
    kl_steps: tuple = ()

    def as_row(self) -> dict:
        return {
            "epoch": self.epoch, "step": self.step,
            "loss_rec": self.loss_rec, "loss_vadv": self.loss_vadv,
            "delta_norm": self.delta_norm, "grad_norm": self.grad_norm,
            "phase": self.phase,
        }


HISTORY_COLUMNS = ("epoch", "step", "loss_rec", "loss_vadv", "delta_norm", "grad_norm", "phase")


class _SequenceState:
    """Per-sequence scratch carried through the K ascent steps."""

    def __init__(self, packed: PackedSequence, params, model_cfg, adapters, delta):
        self.packed = packed
        self.pred_rows = packed.prediction_rows()
        self.embeddings = embed(packed, params, model_cfg)
        self.clean_logits, _ = forward(
            self.embeddings, params, model_cfg, adapters=adapters, want_trace=False)
        self.delta = delta.astype(self.embeddings.dtype)
        self.logits, self.trace = forward(
            self.embeddings, params, model_cfg,
            perturbation=self.delta, adapters=adapters)

    def kl_at(self, params, model_cfg, adapters, delta):
        logits, trace = forward(
            self.embeddings, params, model_cfg, perturbation=delta, adapters=adapters)
        return kl_div(logits, self.clean_logits, self.pred_rows), logits, trace


def minibatch_step(
    params: dict[str, np.ndarray],
    model_cfg: ModelConfig,
    adapters: AdapterSet,
    batch: Sequence[PackedSequence],
    cfg: VATConfig,
    epoch: int,
    rng: np.random.Generator,
    hessian_rng: np.random.Generator | None = None,
    step_index: int = 0,
) -> StepReport:
    """One pass of the inner-ascent / averaged-descent update on a minibatch.

    The clean output distribution is computed once per sequence and treated
    as a constant.  For m = 1..K: accumulate (1/K of) the batch-mean adapter
    gradient of ``loss_rec + alpha * kl`` at the current perturbation, then
    move each perturbation one ascent step along its own adversarial
    gradient (KL term only).  Afterwards the adapters take a single step
    against the accumulated gradient.  If an ascent step would lower the
    adversarial loss, its step size is halved a few times and the move is
    dropped when that fails, so the inner loop never descends.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    cfg.validate()
    if hessian_rng is None:
        hessian_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
    phase = "pgd" if epoch <= cfg.resolved_pgd_epochs() else "pnm"
    K = cfg.ascent_steps
    nseq = len(batch)

    states = [
        _SequenceState(
            p, params, model_cfg, adapters,
            init_perturbation(len(p), model_cfg.dim, cfg.gamma, cfg.sigma, rng, cfg.epsilon))
        for p in batch
    ]

    g_accum = adapters.zeros_like_grads()
    rec_sum = 0.0
    kl_sum = 0.0
    kl_steps: list[float] = []
    for _m in range(K):
        kl_now = []
        g_adv_list = []
        for st in states:
            lrec, dlog_rec = loss_rec_with_grad(st.logits, st.packed)
            lkl, dlog_kl = kl_div_with_grad(st.logits, st.clean_logits, st.pred_rows)
            if not (math.isfinite(lrec) and math.isfinite(lkl)):
                raise DivergenceDetected(epoch, step_index, "inner loss")
            rec_sum += lrec
            kl_sum += lkl
            kl_now.append(lkl)

            grads_rec = backward(st.trace, dlog_rec)
            grads_kl = backward(st.trace, dlog_kl)
            for name, g in grads_rec.adapters.items():
                g_accum[name] += (g + cfg.alpha * grads_kl.adapters[name]) / (K * nseq)
            g_adv_list.append(grads_kl.d_embeddings)
        kl_steps.append(sum(kl_now) / nseq)

        for st, g_adv, lkl in zip(states, g_adv_list, kl_now):
            if phase == "pgd":
                def stepper(delta, eta, _g=g_adv):
                    return ascent_step_pgd(delta, _g, eta, cfg.epsilon)
            else:
                def grad_fn(d, _st=st):
                    logits, trace = forward(
                        _st.embeddings, params, model_cfg,
                        perturbation=d, adapters=adapters)
                    _, dlog = kl_div_with_grad(logits, _st.clean_logits, _st.pred_rows)
                    return backward(trace, dlog).d_embeddings

                hess = estimate_hessian_diag(
                    grad_fn, st.delta, cfg.hessian_probes, hessian_rng,
                    damping=cfg.damping, g0=g_adv)

                def stepper(delta, eta, _g=g_adv, _h=hess):
                    return ascent_step_pnm(delta, _g, _h, eta, cfg.epsilon)

            # Monotone-ascent safeguard: halve eta up to a few times, keep
            # the old point if the adversarial loss still drops.
            eta = cfg.eta
            for _try in range(_MAX_ETA_HALVINGS + 1):
                cand = stepper(st.delta, eta)
                kl_cand, logits_c, trace_c = st.kl_at(params, model_cfg, adapters, cand)
                if kl_cand >= lkl:
                    st.delta, st.logits, st.trace = cand, logits_c, trace_c
                    break
                eta *= 0.5
            # ball invariant, with an ulp of slack for float32 scaling
            assert frob(st.delta) <= cfg.epsilon * (1 + 1e-6)

    adapters.apply_update(g_accum, cfg.tau)
    grad_norm = math.sqrt(sum(float(np.sum(g * g)) for g in g_accum.values()))
    delta_norm = sum(frob(st.delta) for st in states) / nseq
    report = StepReport(
        epoch=epoch, step=step_index,
        loss_rec=rec_sum / (K * nseq), loss_vadv=kl_sum / (K * nseq),
        delta_norm=delta_norm, grad_norm=grad_norm, phase=phase,
        kl_steps=tuple(kl_steps),
    )
    if not (math.isfinite(report.loss_rec) and math.isfinite(report.loss_vadv)):
        raise DivergenceDetected(epoch, step_index, "batch loss")
    return report


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def train(
    pairs: Sequence[PackedSequence],
    params: dict[str, np.ndarray],
    model_cfg: ModelConfig,
    adapters: AdapterSet,
    cfg: VATConfig,
    shuffle_rng: np.random.Generator,
    delta_rng: np.random.Generator,
    hessian_rng: np.random.Generator | None = None,
    epoch_callback: Callable[[int, list[StepReport]], None] | None = None,
) -> list[StepReport]:
    """Run ``cfg.epochs`` epochs of minibatch VAT over ``pairs``.

    Minibatch order reshuffles every epoch from ``shuffle_rng``.  Epochs are
    1-based; epoch <= e* uses PGD ascent, later epochs the Newton variant.
    ``epoch_callback`` (for checkpointing) fires after every completed epoch.
    A divergence aborts the epoch and propagates after the callback has seen
    the last completed epoch.
    """
    if not pairs:
        raise ValueError("no training pairs")
    cfg.validate()
    if hessian_rng is None:
        hessian_rng = np.random.default_rng(delta_rng.integers(0, 2**63 - 1))
    history: list[StepReport] = []
    step_index = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(pairs))
        epoch_reports: list[StepReport] = []
        for lo in range(0, len(pairs), cfg.batch_size):
            batch = [pairs[int(i)] for i in order[lo : lo + cfg.batch_size]]
            report = minibatch_step(
                params, model_cfg, adapters, batch, cfg, epoch,
                delta_rng, hessian_rng, step_index=step_index)
            epoch_reports.append(report)
            history.append(report)
            step_index += 1
        if epoch_callback is not None:
            epoch_callback(epoch, epoch_reports)
    return history
