"""When EP gives up: collapse onto the spike on small sparse problems.

With few weights and a sparse prior, EP can slide into a state where every
weight marginal sits on w = 0. Every moment is then tiny, so the sweep change
drops below any absolute threshold. The engine flags this state instead of
calling it convergence.
"""
import numpy as np

from ep_perceptron import EPConfig, PriorSet, SpikeSlab, ep_run, make_instance

cfg = EPConfig(damping=0.5, eps_stop=1e-8, max_iter=20000)
for n, m, rho in ((8, 16, 0.25), (8, 16, 0.5), (32, 64, 0.25)):
    collapsed = 0
    for seed in range(12):
        inst = make_instance(n, m, rho, np.random.default_rng(seed))
        res = ep_run(inst.design, PriorSet(SpikeSlab(rho, 1.0)), cfg)
        collapsed += res.collapsed
    print(f"N={n:3d} M={m:3d} rho={rho}: {collapsed:2d} of 12 runs collapsed onto w = 0")

inst = make_instance(8, 16, 0.25, np.random.default_rng(0))
res = ep_run(inst.design, PriorSet(SpikeSlab(0.25, 1.0)), cfg)
print(f"\nexample: eps={res.eps_final:.1e} yet max |w| = {np.abs(res.weights).max():.1e}; "
      f"reported converged={res.converged}, collapsed={res.collapsed}")
