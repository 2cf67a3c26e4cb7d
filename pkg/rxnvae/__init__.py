"""Generative modeling of reaction trees paired with junction trees."""

from .version import VERSION

__version__ = VERSION
