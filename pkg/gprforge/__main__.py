import sys

from gprforge.cli import main

sys.exit(main())
