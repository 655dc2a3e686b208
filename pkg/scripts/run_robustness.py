#!/usr/bin/env python3
"""Robustness studies: vanishing storage with large lambda, then vanishing densities.

The second study switches the filtration-velocity space to BDM1, which is
what restores second-order w-convergence in the quasistatic limit.
"""

import sys

from poromix.cli import main

if __name__ == "__main__":
    extra = sys.argv[1:]
    code_a = main(["--scenario", "robust_incompressible", "--out", "out/robust_incompressible", *extra])
    code_b = main(["--scenario", "robust_nodensity", "--out", "out/robust_nodensity", *extra])
    sys.exit(code_a or code_b)
