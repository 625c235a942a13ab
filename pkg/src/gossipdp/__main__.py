import sys

from gossipdp.cli import main

sys.exit(main())
