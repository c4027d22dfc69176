#!/usr/bin/env python3
"""Newsvendor CVaR study with the config next to this script.

Usage: python scripts/run_newsvendor_study.py [config.json] [outdir]
Set WASSDRO_SEED to override the config seed.
"""
import sys
from pathlib import Path

from wassdro.cli import main

if __name__ == "__main__":
    cfg = sys.argv[1] if len(sys.argv) > 1 else str(Path(__file__).with_name("newsvendor_config.json"))
    out = sys.argv[2] if len(sys.argv) > 2 else "results/newsvendor"
    sys.exit(main(["newsvendor", "--config", cfg, "--out", out]))
