"""Entry point for python -m flexpilot."""

import sys

from .cli import main

sys.exit(main())
