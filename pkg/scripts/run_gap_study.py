#!/usr/bin/env python3
"""Reduced gap table: K = 4, I in {5, 10, 20}, ten trials per cell.

Writes gaps.csv, gap_records.csv and gap_timings.csv under results/gap.
Extra arguments are passed to ``wassdro gap-study`` (for example ``--full``).
"""
import sys

from wassdro.cli import main

if __name__ == "__main__":
    sys.exit(main(["gap-study", "--k", "4", "--i", "5", "10", "20", "--trials", "10",
                   "--out", "results/gap", *sys.argv[1:]]))
