"""Thin entry script: python scripts/irc.py <subcommand> ..."""

import os
import sys

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.cli.main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
