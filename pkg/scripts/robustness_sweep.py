"""Certified perturbation margin of the LQ closed loop at each PI+ iteration."""
import argparse

from piplus_kit.bounds import bound_bundle
from piplus_kit.model import Grid, discretize, lq_model
from piplus_kit.piplus import run_piplus
from piplus_kit.verify import check_robust_stability


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--iters", type=int, default=10)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--delta", type=float, default=0.01)
    ap.add_argument("--mode", choices=["worst", "random"], default="worst")
    args = ap.parse_args()

    model, cert = lq_model(0.9, 1.0, 1.0, 1.0, 5.0, -0.5)
    table = discretize(model, Grid([-2.0], [2.0], [2001]), 1001)
    beta = bound_bundle(cert, s_max=4.0).beta
    levels = [0.06 * 0.99 ** j for j in range(100)] + [0.0]
    for t in run_piplus(table, args.iters):
        res = check_robust_stability(table, t.selection, beta, levels, args.delta, 1.0,
                                     trials=args.trials, mode=args.mode)
        print(f"i={t.iteration:2d} margin={res.margin:.5f} levels tried={len(res.levels)}")


if __name__ == "__main__":
    main()
