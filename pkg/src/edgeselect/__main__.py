"""Entry point for python -m edgeselect."""

import sys

from edgeselect.cli import main

if __name__ == "__main__":
    sys.exit(main())
