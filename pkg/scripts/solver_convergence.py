"""Global error of each integrator on dz/dt = -z at t = 1 as the step halves."""
import math

import numpy as np

from etnode import autodiff as ad
from etnode.odenet import SolverConfig, TimeGrid, ode_solve


def main():
    decay = lambda z: ad.scalar_mul(z, -1.0)
    exact = math.exp(-1)
    print(f"{'method':>6} {'h':>8} {'error':>11} {'ratio':>7}")
    for method in ("euler", "rk4"):
        prev = None
        for h in (0.2, 0.1, 0.05, 0.025):
            z = ode_solve(decay, np.ones((1, 1)), TimeGrid((1.0,)), SolverConfig(method, h))[0].value.item()
            err = abs(z - exact)
            ratio = f"{prev / err:7.2f}" if prev else ""
            print(f"{method:>6} {h:>8g} {err:>11.3e} {ratio}")
            prev = err
    for rtol in (1e-3, 1e-6, 1e-9):
        z = ode_solve(decay, np.ones((1, 1)), TimeGrid((1.0,)), SolverConfig("rk45", rtol=rtol, atol=rtol * 1e-2))
        print(f"  rk45 rtol={rtol:g}: error {abs(z[0].value.item() - exact):.3e}")


if __name__ == "__main__":
    main()
