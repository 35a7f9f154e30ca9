from .errors import *
from .linalg import *
from .msign import *
from .optim import *
from .tasks import *
from .benchmarker import *
from .harness import *
from .sweeps import *
from .reports import *
from .config import *
