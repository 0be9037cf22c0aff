import sys

from tubekit.cli import main

sys.exit(main())
