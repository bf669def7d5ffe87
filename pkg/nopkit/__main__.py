import sys

from nopkit.main import main

sys.exit(main())
