import sys

from .cli_runner.cli import main

sys.exit(main())
