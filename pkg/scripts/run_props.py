#!/usr/bin/env python3
"""Run the generator-driven property suites and print the JSON summary.

    python scripts/run_props.py --seed 42 --cases 500
    python scripts/run_props.py --cases 50 --mutate-split   # expect failures
"""

import sys

from gradebor.cli import main

if __name__ == "__main__":
    sys.exit(main(["props", *sys.argv[1:]]))
