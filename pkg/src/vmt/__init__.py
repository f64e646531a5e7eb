"""Video-conditioned piano performance generation on numpy.

Layers, bottom to top: a small reverse-mode autodiff engine (``tensor``),
neural building blocks (``nn``), the two generation models (``models``),
standard MIDI file io (``midi``), the performance-event codec (``codec``),
dataset containers and synthesis (``data``), training (``train``),
generation (``infer``), piano-roll rendering (``viz``) and the command
line front end (``cli``).
"""
from .tensor import GraphError, ShapeError, Tensor, new_rng, no_grad

__all__ = ["Tensor", "new_rng", "no_grad", "ShapeError", "GraphError"]
__version__ = "0.1.0"
