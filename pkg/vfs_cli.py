#!/usr/bin/env python3
"""
VFS lab launcher.

Requirements: Python 3.9+, see requirements.txt.
Usage:
  1) Adjust settings in config.json (or config.local.json) as needed
  2) Optionally set VFS_NUM_WORKERS / VFS_LOG_LEVEL / VFS_DATA_SEED in .env
  3) Run: python vfs_cli.py train --out runs/baseline
"""

import sys
from vfs_lab.cli import main

if __name__ == "__main__":
    sys.exit(main())
