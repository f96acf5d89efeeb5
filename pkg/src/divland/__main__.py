import sys

from divland.cli import main

sys.exit(main())
