# "__main__.py" from libRDGSPy by NinjaCheetah & Contributors

import sys

from .cli import main

sys.exit(main())
