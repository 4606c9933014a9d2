"""HTTP service wrapping the codec."""

from .app import create_app

__all__ = ["create_app"]
