#!/usr/bin/env python3
"""Convergence study: manufactured solution on four structured meshes (RT0 flux)."""

import sys

from poromix.cli import main

if __name__ == "__main__":
    sys.exit(main(["--scenario", "convergence", "--out", "out/convergence", *sys.argv[1:]]))
