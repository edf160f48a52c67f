"""
__init__.py for qwalklab
"""
from .exceptions import (
    ClassificationException,
    ConfigException,
    NumericalLiftException,
    ParameterException,
    PreconditionException,
    QWalkLabException,
    SpectralException,
)
from .experiment import run
from .presets import config
from .verify import verify_all
