"""Couplings on elongated Gaussian targets.

The two-point fixed-point theory predicts where the scaled squared
distance plateaus from just two numbers: the effective step parameter and
the eccentricity epsilon = z_1^2 z_{-1}^2 of the precision spectrum.  This
script computes those summaries for an AR(1) and a chi-square-eigenvalue
target, then runs the couplings and compares.
"""

import math

import numpy as np

from mcmccoup.core_math import RngStream
from mcmccoup.couplings import CoupledChainState, CouplingSpec, coupled_rwm_step
from mcmccoup.fixed_points import solve_fixed_point
from mcmccoup.targets import Ar1Gaussian, DiagonalGaussian, spectral_summary

SEED = 3024
D = 300
L = 2.38
T_END = 50
REPS = 5

gen = RngStream(SEED, 10**6).generator
targets = {
    "ar1(0.5)": Ar1Gaussian(D, 0.5),
    "chi2(3)": DiagonalGaussian(gen.chisquare(3, D) / 3.0),
}

for name, target in targets.items():
    summ = spectral_summary(target)
    # run at effective step parameter L by dividing out the spectral scale
    h = L / (summ.z(1) * math.sqrt(D))
    zm1sq = summ.z(-1) ** 2
    n_steps = T_END * D
    print(f"{name}: epsilon = {summ.epsilon:.4f}, z1 = {summ.z(1):.4f}, h = {h:.5f}")
    for kind in ("crn", "reflection", "gcrn"):
        spec = CouplingSpec(kind)
        plateau = 0.0
        for r in range(REPS):
            rng = RngStream(SEED + 1, 100 * ("crn", "reflection", "gcrn").index(kind) + r)
            state = CoupledChainState(x=target.sample(rng), y=target.sample(rng))
            tail, n_tail = 0.0, 0
            for j in range(n_steps):
                state = coupled_rwm_step(state, spec, h, target, rng)
                if j >= n_steps // 2:
                    gap = state.x - state.y
                    tail += float(gap @ gap) / (D * zm1sq)
                    n_tail += 1
            plateau += tail / n_tail
        plateau /= REPS
        if kind == "gcrn":
            print(f"  {kind:10s} plateau {plateau:8.4f}   predicted 0 (meets the limit shape)")
        else:
            fp = solve_fixed_point(kind, L, max(1.0, summ.epsilon))
            print(f"  {kind:10s} plateau {plateau:8.4f}   predicted {fp.s_inf:.4f}")
    print()

print("reflection degrades with eccentricity while gcrn stays contractive;")
print("the prediction needs only the spectral summary, not the full target")
