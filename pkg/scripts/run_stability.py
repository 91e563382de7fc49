#!/usr/bin/env python3
"""Thin wrapper; flags match `nestanet stability`."""
import sys

from nestanet.cli import main

if __name__ == "__main__":
    sys.exit(main(["stability", *sys.argv[1:]]))
