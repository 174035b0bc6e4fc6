"""Sup-norm distance of PI and PI+ iterates to the Riccati value on the LQ benchmark."""
import argparse

import numpy as np

from piplus_kit.model import Grid, discretize, lq_model
from piplus_kit.oracle import riccati_lq
from piplus_kit.pi import run_pi
from piplus_kit.piplus import run_piplus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nodes", type=int, default=2001)
    ap.add_argument("--inputs", type=int, default=1001)
    ap.add_argument("--iters", type=int, default=10)
    args = ap.parse_args()

    model, _ = lq_model(0.9, 1.0, 1.0, 1.0, 5.0, -0.5)
    table = discretize(model, Grid([-2.0], [2.0], [args.nodes]), args.inputs)
    x = table.states[:, 0]
    v_star = riccati_lq(0.9, 1.0, 1.0, 1.0) * x ** 2
    inner = np.abs(x) <= 1.6
    plus = run_piplus(table, args.iters)
    pi = run_pi(table, args.iters)
    print("i  sup|V_pi - V*|  sup|V_pi+ - V*|  max|V_pi - V_pi+|")
    for a, b in zip(pi.traces, plus):
        ea = np.max(np.abs(a.V.values - v_star)[inner])
        eb = np.max(np.abs(b.V.values - v_star)[inner])
        print(f"{a.iteration:2d} {ea:15.3e} {eb:16.3e} {np.max(np.abs(a.V.values - b.V.values)):18.3e}")


if __name__ == "__main__":
    main()
