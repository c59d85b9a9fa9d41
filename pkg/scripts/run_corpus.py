#!/usr/bin/env python3
"""Check and run the shipped corpus against its expected verdicts.

Accepted programs are evaluated and every trace is replayed through the
preservation, progress, borrow-safety, and uniqueness checkers.
"""

import sys

from gradebor.cli import main

if __name__ == "__main__":
    sys.exit(main(["corpus", *sys.argv[1:]]))
