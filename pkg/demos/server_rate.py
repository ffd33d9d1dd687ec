"""
Choosing the aggregation rate
=============================

With Poisson clients, the best server rate for the nonsmooth bound has a
closed form that only needs the sum of the client rates and the mean of
their inverses.  Compare it with a brute-force scan.

"""

import math

import numpy as np

from areafl.schedules import optimal_lambda_s, theorem2_bound

rng = np.random.default_rng(3)
lam = np.exp(rng.uniform(math.log(0.1), math.log(10), 16))
star = optimal_lambda_s(lam)


def bound(lam_s):
    total = lam.sum() + lam_s
    p = lam / total
    return theorem2_bound(10_000, lam_s / total, float(np.mean(1 / p)), 1.0, 1.0, 1, 1.0)


grid = np.logspace(math.log10(star / 10), math.log10(star * 10), 200)
values = np.array([bound(v) for v in grid])
print(f"closed form  {star:.4f}  bound {bound(star):.5f}")
print(f"grid minimum {grid[values.argmin()]:.4f}  bound {values.min():.5f}")

###############################################################################
# Aggregating too rarely or too often both hurt.

for factor in (0.1, 0.5, 1.0, 2.0, 10.0):
    print(f"  lambda_s = {factor:>4} x optimum -> bound {bound(factor * star):.5f}")
