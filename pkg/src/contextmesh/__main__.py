import sys

from contextmesh.cli import main

sys.exit(main())
