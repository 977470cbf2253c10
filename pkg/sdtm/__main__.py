import sys

from sdtm.main import main

sys.exit(main())
