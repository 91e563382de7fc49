#!/usr/bin/env python3
"""Thin wrapper; flags match `nestanet mask`."""
import sys

from nestanet.cli import main

if __name__ == "__main__":
    sys.exit(main(["mask", *sys.argv[1:]]))
