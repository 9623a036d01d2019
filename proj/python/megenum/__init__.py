"""MEG source-count estimation (F-ratio, AIC, MDL) on a spherical head model."""

from ._megenum import *  # noqa: F401,F403
from ._megenum import __doc__  # noqa: F401

__version__ = "0.1.0"
