"""Repeated sizing attempts over a shipped suite; thin wrapper over ``sizeloop bench``."""

import sys

from sizeloop.cli import main

if __name__ == "__main__":
    # e.g. run_bench.py --suite basic6 --attempts 10 --backend random --out runs/basic6
    sys.exit(main(["bench"] + sys.argv[1:]))
