"""
Convergence slopes
==================

Estimate how fast the mean squared distance to the minimizer shrinks on
a small strongly convex suite, and how fast the optimality gap of the
averaged iterate shrinks on a nonsmooth one.  Trial counts are cut down
here so the script finishes in well under a minute.

"""

import numpy as np

from areafl.verify import nonsmooth_rate, strongly_convex_rate

###############################################################################
# Decreasing step sizes on eight 4-D quadratics: the error should fall
# like ``1/k``.

for M in (1, 5):
    st = strongly_convex_rate(M=M, trials=40, K=30_000, window=(3_000, 30_000))
    print(f"M={M}: slope {st.slope:+.3f}")
    for k, e in zip(st.ks, st.errors):
        print(f"    k={k:>6}  E|x - x*|^2 = {e:.3e}")

###############################################################################
# A constant step tuned to the budget ``K`` on ``|x - c_i|`` losses: the
# gap of the averaged iterate should fall like ``1/sqrt(K)``.

st = nonsmooth_rate(Ks=(100, 1_000, 10_000), trials=40)
print(f"nonsmooth: slope {st.slope:+.3f}")
print("    gaps", np.round(st.errors, 5))
