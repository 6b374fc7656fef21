"""Tabulate the Ursell function against spanning-tree counts on small graphs."""
import math
import sys

import numpy as np

from kinlab.graphs import OverlapMatrix, spanning_tree_count, ursell_phi, verify_penrose


def main():
    print(f"{'n':>2} {'phi(K_n)':>10} {'(-1)^(n-1)(n-1)!':>18} {'trees(K_n)':>11}")
    for n in range(1, 9):
        kn = OverlapMatrix(~np.eye(n, dtype=bool))
        print(f"{n:2d} {ursell_phi(kn):10d} {(-1) ** (n - 1) * math.factorial(n - 1):18d} "
              f"{spanning_tree_count(kn):11d}")
    print()
    for n, (checked, bad) in verify_penrose(5).items():
        print(f"n={n}: {checked} overlap matrices, {bad} bound violations")
    return 0


if __name__ == "__main__":
    sys.exit(main())
