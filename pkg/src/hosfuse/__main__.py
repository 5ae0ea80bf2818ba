import sys

from hosfuse.cli import main

sys.exit(main())
