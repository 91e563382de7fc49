#!/usr/bin/env python3
"""Thin wrapper; flags match `nestanet contour`."""
import sys

from nestanet.cli import main

if __name__ == "__main__":
    sys.exit(main(["contour", *sys.argv[1:]]))
