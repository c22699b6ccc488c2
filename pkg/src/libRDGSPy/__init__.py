# "__init__.py" from libRDGSPy by NinjaCheetah & Contributors
#
# These are the essential modules from libRDGSPy that you'd probably want imported by default.

from .errors import *
from .types import *
from .gaussians import *
from .sh import *
from .renderer import *
from .metrics import *
from .pruning import *
from .ecvq import *
from .rangecoder import *
from .codec import *
from .scene import *
from .trainer import *
from .crypto import *
