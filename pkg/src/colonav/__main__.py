"""Allow ``python -m colonav`` as an alias for the ``colonav`` script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
