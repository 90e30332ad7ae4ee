"""Projected ascent on toy losses: plain gradient steps versus Newton steps.

The inner loop of adversarial training maximizes a loss over a norm ball.
On an ill-conditioned quadratic the diagonally preconditioned step reaches
the optimum in far fewer iterations, which is the point of switching to it
in the later epochs.
"""

import numpy as np

from parakit import vat

rng = np.random.default_rng(0)

print("== boundary optimum: target outside the ball ==")
c = rng.normal(size=(4, 4))
c *= 3.0 / vat.frob(c)
eps = 1.0
target = eps * c / vat.frob(c)
delta = np.zeros_like(c)
for it in range(1, 201):
    delta = vat.ascent_step_pgd(delta, 2.0 * (c - delta), eta=0.1, epsilon=eps)
    if vat.frob(delta - target) < 1e-3:
        print(f"plain projected steps reached the boundary optimum in {it} iterations")
        break

print("\n== interior optimum of an ill-conditioned diagonal quadratic ==")
d = 16
curvature = np.logspace(0, 2, d)   # condition number 100
c2 = rng.normal(size=(1, d))
c2 *= 0.5 / vat.frob(c2)


def iterations(step):
    cur = np.zeros_like(c2)
    for it in range(1, 5001):
        cur = step(cur, curvature * (c2 - cur))
        if vat.frob(cur - c2) < 1e-3:
            return it
    return None


eta = 0.02
pgd_iters = iterations(lambda x, g: vat.ascent_step_pgd(x, g, eta, 1.0))
pnm_iters = iterations(lambda x, g: vat.ascent_step_pnm(
    x, g, np.broadcast_to(curvature, x.shape), eta, 1.0))
print(f"plain gradient ascent:    {pgd_iters} iterations to 1e-3")
print(f"preconditioned (Newton):  {pnm_iters} iterations to 1e-3")

print("\n== estimating curvature from gradients alone ==")
D = np.abs(rng.normal(2.0, 0.5, size=(2, 8))) + 0.5
est = vat.estimate_hessian_diag(lambda x: D * x, rng.normal(size=(2, 8)),
                                probes=8, rng=np.random.default_rng(1))
print(f"true diagonal (first row):      {np.round(D[0], 3)}")
print(f"estimated from probes:          {np.round(est[0], 3)}")
print(f"max relative error: {np.max(np.abs(est - D) / D):.3f}")
