"""Weighted cone and divergent beam transforms: forward models and inversion."""

from .fileio import read_container, write_container
from .forward import cone_forward, divergent_beam_forward, radon_forward
from .geometry import make_direction_grid, make_vertex_set, tuy_check
from .phantom import ImageGrid, Phantom, Primitive, phantom_from_spec
from .recon import ReconConfig, reconstruct
from .scenarios import SCENARIOS, get_scenario

__all__ = [
    "ImageGrid",
    "Phantom",
    "Primitive",
    "ReconConfig",
    "SCENARIOS",
    "cone_forward",
    "divergent_beam_forward",
    "get_scenario",
    "make_direction_grid",
    "make_vertex_set",
    "phantom_from_spec",
    "radon_forward",
    "read_container",
    "reconstruct",
    "tuy_check",
    "write_container",
]
__version__ = "0.1.0"
