import sys

from cqfield.cli import main

sys.exit(main())
