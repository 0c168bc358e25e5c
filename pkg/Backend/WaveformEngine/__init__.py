# Backend/WaveformEngine/__init__.py

"""
Package init for WaveformEngine.

Enhancement modes register themselves with @register_mode when ere.py is
imported; importing it here means ERE_MODES is populated before any config or
CLI option tries to resolve a mode name.

Any module that registers new modes should be imported here.
"""

from . import ere  # noqa: F401
