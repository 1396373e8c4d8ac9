"""Sweep cuts on X0 X1 + eps X2^2 as eps shrinks.

The conic pinches into two lines joined by a thin neck; the best sweep
cut should find the neck, whose length scales like sqrt(eps).
"""

import argparse
import math

from cheegerlab import lab


def main():
    ap = argparse.ArgumentParser(description="Cheeger upper bound along the degenerating family")
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3, 1e-4])
    ap.add_argument("--level", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = lab.ExperimentConfig(degrees=(), degenerate_eps=tuple(args.eps), degenerate_level=args.level, seed=args.seed)
    print(f"{'eps':>8} {'status':>9} {'V':>7} {'lam1':>8} {'h_upper':>8} {'cut len':>8} {'len/sqrt(eps)':>13}")
    for r in lab.run_experiment(cfg):
        if not r.accepted:
            print(f"{r.eps:>8g} {r.status:>9} {r.reason}")
            continue
        print(
            f"{r.eps:>8g} {r.status:>9} {r.n_vertices:>7} {r.lambda1:>8.4f} {r.h_upper:>8.4f} "
            f"{r.cut_length:>8.4f} {r.cut_length / math.sqrt(r.eps):>13.4f}"
        )


if __name__ == "__main__":
    main()
