"""allweather - one transformer for rain, raindrop and snow removal."""

import logging

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())
