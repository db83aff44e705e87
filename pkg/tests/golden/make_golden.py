"""Regenerate the golden sweep tables from the mpmath oracles.

    python3 tests/golden/make_golden.py
"""

import csv
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

import mpmath  # noqa: E402

import oracles  # noqa: E402


def golden_name(M, eps):
    return f"sweep_M{M:g}_eps{eps:g}.csv"


def main():
    for M, eps in oracles.PAPER_SWEEPS:
        with open(HERE / golden_name(M, eps), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "n0", "N_prime0", "n0_exact", "N_prime0_exact"])
            for k, n0, np0, n0e, npe in oracles.sweep_rows(M, eps):
                w.writerow([repr(k), n0, np0, mpmath.nstr(n0e, 25), mpmath.nstr(npe, 25)])


if __name__ == "__main__":
    main()
