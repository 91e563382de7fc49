#!/usr/bin/env python3
"""Thin wrapper; flags match `nestanet recover`."""
import sys

from nestanet.cli import main

if __name__ == "__main__":
    sys.exit(main(["recover", *sys.argv[1:]]))
