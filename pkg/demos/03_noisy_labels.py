"""Flipped labels: model them, and learn how many there are.

Ten percent of the labels are flipped. The theta-mixture label prior gives
every constraint a chance of being wrong, and the student can estimate that
chance from the data by descending the free energy in eta.
"""
import numpy as np

from ep_perceptron import EPConfig, PriorSet, SpikeSlab, ThetaMixture, ep_run, make_instance
from ep_perceptron.free_energy import ep_run_learning
from ep_perceptron.metrics import normalized_mse_db, roc_and_auc

rng = np.random.default_rng(11)
inst = make_instance(n=128, m=768, rho=0.25, rng=rng, eta=0.9)
truth = inst.teacher != 0
print(f"{int(inst.flipped.sum())} of {inst.m} labels flipped")
cfg = EPConfig(damping=0.9, eps_stop=1e-4, max_iter=5000)


def show(tag, res):
    w = res.weights
    print(f"{tag:32s} converged={str(res.converged):5s} sweeps={res.iterations:5d} "
          f"MSE={normalized_mse_db(w, inst.teacher):6.1f} dB "
          f"AUC={roc_and_auc(np.abs(w), truth).auc:.3f}")


show("noise-aware prior, eta = 0.9", ep_run(inst.design, PriorSet(SpikeSlab(0.25), ThetaMixture(0.9)), cfg))
learned = ep_run_learning(inst.design, PriorSet(SpikeSlab(0.25), ThetaMixture(0.7)), cfg,
                          learn_rho=False, learn_eta=True)
show("eta learned from 0.7", learned)
print(f"learned eta = {learned.priors.eta:.4f} (true fraction kept {1 - inst.flipped.mean():.4f})")
