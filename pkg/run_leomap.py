#!/usr/bin/env python3
"""CLI wrapper for the leomap measurement stages."""

from leomap.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
