#!/usr/bin/env python3
"""
MEMS Transmission Toolkit - Main Application Entry Point
Command-line entry point: python main.py <command> --config <file>
"""

import sys
from pathlib import Path

# Add project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from app.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
