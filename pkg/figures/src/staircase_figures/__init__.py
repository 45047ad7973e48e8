"""Read staircase-lab run directories and render publication-style figures."""

__version__ = "0.1.0"

from .reading import SchemaError, read_table, split_curves
from .render import RENDERERS, render
