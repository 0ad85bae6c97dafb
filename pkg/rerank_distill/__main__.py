"""Entry point for ``python -m rerank_distill``."""

import sys

from .cli import main

sys.exit(main())
