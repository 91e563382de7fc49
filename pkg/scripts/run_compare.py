#!/usr/bin/env python3
"""Thin wrapper; flags match `nestanet compare`."""
import sys

from nestanet.cli import main

if __name__ == "__main__":
    sys.exit(main(["compare", *sys.argv[1:]]))
