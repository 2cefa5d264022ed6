"""Allow running the package with: python -m tools.intersectional_debias"""

import sys

from .cli import main

sys.exit(main())
