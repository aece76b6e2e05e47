"""
Main entry point for running the FrugalHop package directly.

This allows the package to be run using:
`python -m FrugalHop <command> [options]`
"""

import sys
from .cli import main

if __name__ == "__main__":
    sys.exit(main())
