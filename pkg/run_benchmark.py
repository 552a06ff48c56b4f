#!/usr/bin/env python
"""
Stochastic Navier-Stokes Benchmark Runner

Single entry point for the low-rank all-at-once solver:

    python run_benchmark.py run --config configs/benchmark.toml
    python run_benchmark.py oracle --config configs/tiny_channel.toml
    python run_benchmark.py sweep --config configs/benchmark.toml --parameter tol_gmres --values 1e-1,1e-3,1e-5

Exit codes: 0 success, 2 nonconvergence, 3 invalid configuration.
"""

import os
import sys

from dotenv import load_dotenv

# Add the project root to the Python path
sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))

# Load environment variables
load_dotenv()

from src.cli import main


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\nRun interrupted by user. Exiting...")
        sys.exit(130)
