"""Axial-centric cross-plane attention for 3D volume classification, on a
small numpy autodiff engine."""

__version__ = "0.1.0"
