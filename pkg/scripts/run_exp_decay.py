#!/usr/bin/env python3
"""Thin wrapper; flags match `nestanet exp-decay`."""
import sys

from nestanet.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp-decay", *sys.argv[1:]]))
