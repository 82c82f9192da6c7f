import sys

from fcmlab.cli import main

sys.exit(main())
