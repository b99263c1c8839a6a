"""Small-mass fraction of near-birth clusters: simulation against the exact family-size law.

A single particle under binary branching at rate 2cn (critical) has, given survival to
age t, a Geometric(1/(1 + c n t)) family size.  The fraction of surviving clusters with
mass <= k/n is therefore 1 - (cnt / (1 + cnt))**k, which the scan compares with the
particle sampler for a few probe times.
"""

from skewconv.cumulant import BranchingMechanism
from skewconv.motion import MotionModel
from skewconv.particles import near_birth_diagnostic

N, K, CLUSTERS, SEED = 1000, 10, 500, 1


def predicted(c: float, n: int, t: float, k: int) -> float:
    x = c * n * t
    return 1.0 - (x / (1.0 + x)) ** k


def main():
    mech = BranchingMechanism([0.0, 0.0], [1.0, 1.0])
    motion = MotionModel.two_state(1.0)
    print(f"{'probe':>8s} {'concentration':>14s} {'simulated':>10s} {'predicted':>10s}")
    for probe in (0.01, 0.003, 1e-3, 2e-4, 1e-4):
        nb = near_birth_diagnostic(mech, motion, 0, probe, N, CLUSTERS, SEED)
        print(f"{probe:8.0e} {nb.concentration:14.4f} {nb.small_fraction:10.3f} {predicted(1.0, N, probe, K):10.3f}")
    # smallest probe meeting the 99% rule at this n
    need = 1.0 / ((1.0 / (1.0 - 0.01 ** (1.0 / K)) - 1.0) * N)
    print(f"99% of clusters at mass <= {K}/n needs probe <= {need:.2e} for n={N}, c=1")


if __name__ == "__main__":
    main()
