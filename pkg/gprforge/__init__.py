# coding: utf-8

# flake8: noqa

"""
    gprforge: simulated GPR radargrams and buried-object hyperbola detection.
"""

__version__ = "1.0.0"

# configuration and errors
from gprforge.configuration import Configuration, load_config
from gprforge.exceptions import GprForgeException

# domain types
from gprforge.models import *
