#!/usr/bin/env python3
"""Wave propagation run: Ricker source on the 4800 m square, VTK snapshots."""

import sys

from poromix.cli import main

if __name__ == "__main__":
    sys.exit(main(["--scenario", "wave", "--out", "out/wave", *sys.argv[1:]]))
