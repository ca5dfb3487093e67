import sys

from DCFM.cli import main

sys.exit(main())
