import sys

from otstereo.cli import main

sys.exit(main())
