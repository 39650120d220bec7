"""Photon-limited HDR imaging: sensor simulation, noise-aware fusion, and a multi-exposure transformer fusion network."""
from ._accel import backend

__version__ = "0.1.0"
