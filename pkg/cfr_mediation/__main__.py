import sys

from cfr_mediation.cli import main

sys.exit(main())
