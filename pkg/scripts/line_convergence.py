"""Refinement study on a projective line, where every quantity is known.

A line is a round sphere of curvature 4 and area pi: lambda1 = 8 with
multiplicity 3 and the Cheeger constant is 2 (the equator over a hemisphere).
"""

import argparse
import math
import time

import numpy as np

from cheegerlab.cheeger import estimate_cheeger
from cheegerlab.kostlan import EnsembleSeed, sample_kostlan
from cheegerlab.projective import make_fiber_system, random_pencil
from cheegerlab.spectral import spectrum
from cheegerlab.surface_mesh import curvature, lift_mesh, prepare_base, total_area


def main():
    ap = argparse.ArgumentParser(description="lambda1 and h of a line under refinement")
    ap.add_argument("--levels", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    P = sample_kostlan(1, EnsembleSeed(args.seed))
    print(f"{'level':>5} {'V':>7} {'area/pi':>9} {'lam1':>8} {'lam2':>8} {'lam3':>8} {'h_upper':>8} {'sec':>6}")
    for level in args.levels:
        tic = time.perf_counter()
        pencil, pts = random_pencil(P, np.random.default_rng(args.seed))
        mesh = lift_mesh(P, pencil, prepare_base(level, pts, make_fiber_system(P, pencil)), pts)
        spec = spectrum(mesh, k=5)
        est = estimate_cheeger(mesh, spec, curvature(mesh).inf)
        lam = spec.eigenvalues
        print(
            f"{level:>5} {mesh.n_vertices:>7} {total_area(mesh) / math.pi:>9.5f} "
            f"{lam[1]:>8.4f} {lam[2]:>8.4f} {lam[3]:>8.4f} {est.h_upper:>8.4f} {time.perf_counter() - tic:>6.1f}"
        )


if __name__ == "__main__":
    main()
