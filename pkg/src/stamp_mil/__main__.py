import sys

from stamp_mil.cli import main

sys.exit(main())
