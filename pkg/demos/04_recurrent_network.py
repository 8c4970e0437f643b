"""Reconstruct a recurrent network from its own trajectory.

A network of 64 diluted perceptrons runs synchronous sign dynamics. Each
unit's incoming weights are a separate perceptron problem: the other units'
states are the patterns and the unit's next state is the label.
"""
import numpy as np

from ep_perceptron import EPConfig, PriorSet, SpikeSlab
from ep_perceptron.datagen import glauber_states, perceptron_instance, sample_network
from ep_perceptron.free_energy import ep_run_learning
from ep_perceptron.metrics import normalized_mse_db, roc_and_auc

rng = np.random.default_rng(3)
n, m = 64, 384
net = sample_network(n, rho=0.25, rng=rng)
states = glauber_states(net, m, rng, update="sync")
print(f"{m} synchronous states of a {n}-unit network; "
      f"{len(np.unique(states, axis=0))} distinct")

rows = []
for unit in range(6):
    inst = perceptron_instance(net, states, unit)
    res = ep_run_learning(inst.design, PriorSet(SpikeSlab(0.5, 1.0)),
                          EPConfig(damping=0.9, eps_stop=1e-4), learn_rho=True)
    truth = inst.teacher != 0
    rows.append((unit, res.converged, res.priors.weight.rho, truth.mean(),
                 normalized_mse_db(res.weights, inst.teacher),
                 roc_and_auc(np.abs(res.weights), truth).auc))

print("unit  converged  rho_learned  rho_true  MSE(dB)   AUC")
for unit, conv, rho, true_rho, mse, auc in rows:
    print(f"{unit:4d}  {str(conv):9s}  {rho:11.4f}  {true_rho:8.4f}  {mse:7.1f}  {auc:.3f}")
