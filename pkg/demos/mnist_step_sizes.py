"""
Step sizes on MNIST
===================

Softmax regression on 2000 MNIST images split over 16 clients with a
skewed Dirichlet split.  Sweep the client step size for AREA and FedBuff
and print accuracy and loss at the horizon.  One trial per setting keeps
the run to a few minutes; ``configs/mnist_scaled.ini`` uses three.

"""

import math
from pathlib import Path

from areafl.experiment import ExperimentConfig, run_sweep

root = Path(__file__).resolve().parents[1]
base = ExperimentConfig.from_file(root / "configs" / "mnist_scaled.ini").with_overrides(
    **{"experiment.trials": 1})

###############################################################################
# ``run_sweep`` reuses the data split for every grid point, so only the
# step size changes between rows.

for method in ("area", "fedbuff"):
    cfg = base.with_overrides(**{"experiment.method": method})
    for rep in run_sweep(cfg, "alpha=1e-2:1e3:log6"):
        agg = rep.aggregate()
        flag = "diverged" if any(rep.diverged) else ""
        rho = ">1" if math.isinf(rep.rho) else f"{rep.rho:.2f}"
        print(f"{method:>8}  alpha={rep.alpha:<8g} acc={agg['acc_mean']:.3f}  loss={agg['loss_mean']:<10.4g} "
              f"rho={rho} {flag}")
