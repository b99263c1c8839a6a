"""Step-size study of the cumulant solver and the time-integrated entrance functional.

Prints the error of V_1 f (Riccati, exact 1/2) and of the long-time limit J_oo
(logistic mechanism, exact log 2) as the grid step is refined.
"""

import math

from skewconv.cumulant import BranchingMechanism, solve_cumulant
from skewconv.motion import MotionModel
from skewconv.semigroup import EntranceLawSpec, SCSemigroupSpec, longtime_decompose, sc_log_laplace


def main():
    still = MotionModel.still(1)
    riccati = BranchingMechanism([0.0], [1.0])
    logistic = SCSemigroupSpec(EntranceLawSpec([1.0]), BranchingMechanism([1.0], [1.0]), still)
    print(f"{'step':>8s} {'V_1 err':>10s} {'J_1 err':>10s} {'J_oo err':>10s}")
    for step in (0.1, 0.05, 0.02, 0.01, 0.005, 0.001):
        v = solve_cumulant(riccati, still, [1.0], 1.0, step).final[0]
        j1 = sc_log_laplace(SCSemigroupSpec(EntranceLawSpec([1.0]), riccati, still), [1.0], 1.0, step)
        lim = longtime_decompose(logistic, [1.0], step=step)
        print(f"{step:8.3f} {abs(v - 0.5):10.2e} {abs(j1 - math.log(2)):10.2e} {abs(lim.value - math.log(2)):10.2e}")


if __name__ == "__main__":
    main()
