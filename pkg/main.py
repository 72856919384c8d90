"""
DRO Confidence Intervals - Main Entry Point
Bartlett-corrected φ-divergence DRO intervals and their coverage experiments
"""

import sys

from cli.commands import main

if __name__ == "__main__":
    sys.exit(main())
