import sys
from crowdnms.cli import main

sys.exit(main())
