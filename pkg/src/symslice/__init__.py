"""symslice: planar reflective symmetry estimation for 3D point clouds."""

__version__ = "0.1.0"
