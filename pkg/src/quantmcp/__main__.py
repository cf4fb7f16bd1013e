"""Allow ``python -m quantmcp`` alongside the installed console script."""

import sys

from .cli import main

sys.exit(main())
