"""Degrees of freedom of selection with and without shrinkage on pure noise.

Soft thresholding at a fixed level has about ``k`` degrees of freedom when it
keeps ``k`` coefficients; keeping the ``k`` largest coefficients unshrunk
costs far more.  The gap is the mirror correction.

    python3 demos/mirror_dof.py
"""

import numpy as np

from sparsecp import mc_dof, threshold_selector

n, kmax = 2000, 100
dof = mc_dof(threshold_selector(kmax), m=n, kappa_max=kmax, reps=200, seed=0)
print(" kappa      nu    (se)   mirror*n")
for k in (1, 5, 10, 20, 50, 100):
    print(f"{k:6d} {dof.nu[k]:8.2f} ({dof.se[k]:5.2f}) {dof.mirror[k] * n:8.2f}")
