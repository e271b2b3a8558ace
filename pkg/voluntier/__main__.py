import sys

from voluntier.cli import main

sys.exit(main())
