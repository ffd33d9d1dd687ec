"""
Fast and slow clients
=====================

Two clients hold ``f_1 = (x + 1)^2 / 2`` and ``f_2 = (x - 1)^2 / 2``, so
the global minimizer is ``x* = 0``.  Client 1 reports ten times as often
as client 2.

"""

import numpy as np

from areafl import protocol
from areafl.data import quadratic_suite
from areafl.scheduler import PoissonRates, TrialSetup, run_trial, stationary_probabilities
from areafl.schedules import TheoremOne

prob = quadratic_suite([np.ones(1)] * 2, [[-1.0], [1.0]])
model = PoissonRates((10.0, 1.0), 1.0)
crit = protocol.Buffered(1)

# step sizes decrease with the slowest event probability
p, p_s = stationary_probabilities(model, crit)
sched = TheoremOne.from_constants(1.0, 1.0, 1, min(p.min(), p_s))
print("event probabilities", p.round(3), round(p_s, 3))

###############################################################################
# Overwriting the server model with each incoming local model lets the fast
# client dominate.  Averaging memories instead weighs both clients equally.

for method in ("as-fedavg", "area"):
    for K in (1_000, 10_000, 100_000):
        res = run_trial(TrialSetup(prob, method=method, schedule=sched, event_model=model, criterion=crit, K=K))
        print(f"{method:>10}  K={K:>7}  x_s={res.x_s[0]:+.5f}")
