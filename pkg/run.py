#!/usr/bin/env python3
"""
Command-line startup script: `python run.py <command> [options]`.
"""
import sys

from gatiaa.cli import main

if __name__ == '__main__':
    sys.exit(main())
