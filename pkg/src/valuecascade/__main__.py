import sys

from valuecascade.cli import main

sys.exit(main())
