import sys
from cadgis.cli import main

sys.exit(main())
