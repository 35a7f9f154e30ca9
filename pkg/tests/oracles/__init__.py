from .reference import *
from .ratios import *
