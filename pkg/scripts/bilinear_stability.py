"""Spectral radius of GDA vs simplified-FR on f = x*y across step sizes, with a simulated check.

Usage: python scripts/bilinear_stability.py [--iters 2000]
"""

import argparse

import numpy as np

from fastgan_lab.games import make_bilinear_game
from fastgan_lab.trainers import DivergedError, run_game, spectral_radius_jacobian


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=2000)
    args = ap.parse_args()

    game = make_bilinear_game([[1.0]])
    start = (np.array([1.0]), np.array([1.0]))
    print(f"{'eta':>6} {'rule':<15} {'rho':>10} {'|p_T|':>12}")
    np.seterr(over="ignore", invalid="ignore")  # GDA at large eta overflows on purpose
    for eta in (0.01, 0.05, 0.1, 0.2, 0.5, 0.9):
        for rule in ("gda", "gda_alternating", "simplified_fr"):
            # the dense Jacobian covers the simultaneous rules only
            rho = "" if rule == "gda_alternating" else f"{spectral_radius_jacobian(game, start, eta, eta, rule).spectral_radius:.6f}"
            try:
                final = f"{np.linalg.norm(run_game(game, rule, start, eta, eta, args.iters)[-1]):.4e}"
            except DivergedError:
                final = "diverged"
            print(f"{eta:>6} {rule:<15} {rho:>10} {final:>12}")


if __name__ == "__main__":
    main()
