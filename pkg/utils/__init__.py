"""Utilities module"""

from .errors import DroCiError, InputError, ComputationError
from .log_config import configure_logging
from .seeding import mix_seed

__all__ = ["DroCiError", "InputError", "ComputationError", "configure_logging", "mix_seed"]
