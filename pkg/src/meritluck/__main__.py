import sys

from meritluck.cli import main

sys.exit(main())
