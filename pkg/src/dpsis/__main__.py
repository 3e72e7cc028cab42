import sys

from dpsis.cli import main

sys.exit(main())
