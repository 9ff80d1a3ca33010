#!/usr/bin/env python3
"""Regenerate the bundled track (.ort) and vehicle (.orv) files."""

from openrace.stock import write_assets

if __name__ == "__main__":
    for path in write_assets():
        print(f"wrote {path}")
