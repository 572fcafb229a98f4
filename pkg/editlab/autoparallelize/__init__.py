from .base import autoparallelize, autoparallelize_docstring
from .autoparainfo import AutoparaInfo

__all__ = ["autoparallelize", "autoparallelize_docstring", "AutoparaInfo"]
