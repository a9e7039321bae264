import sys

from adens.cli import main

sys.exit(main())
