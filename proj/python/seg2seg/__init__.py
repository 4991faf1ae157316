"""Segment-to-segment simultaneous generation: mapping DPs, metrics, tasks,
training and streaming policies backed by the C++ core."""

from ._seg2seg import *  # noqa: F401,F403
from ._seg2seg import __doc__  # noqa: F401
