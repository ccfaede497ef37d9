"""Multi-view 3D reconstruction of perforated kinesiology tape."""

__version__ = "0.1.0"
