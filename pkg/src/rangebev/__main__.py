import sys

from rangebev.cli import main

sys.exit(main())
