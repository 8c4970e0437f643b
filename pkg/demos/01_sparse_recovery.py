"""Recover a sparse teacher from the signs of random projections.

A teacher with 128 weights, a quarter of them nonzero, labels 384 i.i.d.
Gaussian patterns. EP with the matching spike-and-slab prior estimates the
weights; we then ask how well the estimate points along the teacher and how
well it ranks the true support.
"""
import numpy as np

from ep_perceptron import EPConfig, PriorSet, SpikeSlab, ep_run, make_instance
from ep_perceptron.metrics import normalized_mse_db, p_nonzero, roc_and_auc, sensitivity_curve

rng = np.random.default_rng(2024)
inst = make_instance(n=128, m=384, rho=0.25, rng=rng)
print(f"instance: N={inst.n}, M={inst.m}, nonzero teacher weights={np.count_nonzero(inst.teacher)}")

prior = PriorSet(SpikeSlab(rho=0.25, lam=1.0))
res = ep_run(inst.design, prior, EPConfig(damping=0.9, eps_stop=1e-4))
print(f"EP converged={res.converged} after {res.iterations} sweeps (eps={res.eps_final:.1e})")

w = res.weights
print(f"normalised MSE: {normalized_mse_db(w, inst.teacher):.1f} dB")

# two ways to rank weights as 'probably nonzero'
truth = inst.teacher != 0
pw = res.priors.weight
score_p = p_nonzero(res.cav_mean[: inst.n], res.cav_var[: inst.n], pw.rho, pw.lam)
print(f"AUC with |w|:         {roc_and_auc(np.abs(w), truth).auc:.4f}")
print(f"AUC with P(w != 0):   {roc_and_auc(score_p, truth).auc:.4f}")

k = int(truth.sum())
curve = sensitivity_curve(score_p, truth)
print(f"top-{k} weights by P(w != 0) contain {curve[k - 1, 1]:.0%} of the true support")

# a few weights side by side
print("\n  teacher   estimate   P(w != 0)")
for i in np.argsort(-np.abs(inst.teacher))[:5].tolist() + np.flatnonzero(~truth)[:3].tolist():
    print(f"  {inst.teacher[i]:+8.3f}  {w[i]:+8.3f}   {score_p[i]:.3f}")
