"""Batch figure generation from experiment CSV artifacts.

Reads the delimiter-separated runrecord and trajectory files the experiment
CLI emits and renders loss curves, runtime scaling plots, and trajectory
comparisons.  The coupling to the producer is the file format only; this
package never imports it.
"""

from .records import PlotDataError, read_runrecord, read_trajectory
from .spec import PlotSpec, SpecError, load_spec
from .render import render

__version__ = "0.1.0"

__all__ = [
    "PlotDataError",
    "PlotSpec",
    "SpecError",
    "load_spec",
    "read_runrecord",
    "read_trajectory",
    "render",
]
