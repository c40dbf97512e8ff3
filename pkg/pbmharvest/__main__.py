"""Entry point for `python -m pbmharvest`."""

import sys

from pbmharvest.cli.main import main

if __name__ == "__main__":
    sys.exit(main())
