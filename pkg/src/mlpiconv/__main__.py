import sys

from mlpiconv.cli import main

sys.exit(main())
