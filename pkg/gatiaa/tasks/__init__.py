"""
Worker-pool helpers for asynchronous batch preparation.
"""
from .prefetch import prefetch

__all__ = ['prefetch']
