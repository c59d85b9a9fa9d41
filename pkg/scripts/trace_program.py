#!/usr/bin/env python3
"""Emit the JSON Lines trace of a .grb program and check it inline.

    python scripts/trace_program.py src/gradebor/corpus/persimmon.grb
"""

import sys

from gradebor.cli import main

if __name__ == "__main__":
    sys.exit(main(["trace", *sys.argv[1:]]))
