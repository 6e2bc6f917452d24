"""Continuous averaging of periodically forced analytic ODEs and a
separatrix-splitting laboratory for the rapidly forced pendulum."""

__version__ = "0.1.0"
