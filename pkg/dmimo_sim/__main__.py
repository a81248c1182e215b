"""Run the command line interface with ``python -m dmimo_sim``."""

import sys

from dmimo_sim.cli import main

if __name__ == "__main__":
    sys.exit(main())
