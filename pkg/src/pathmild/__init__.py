"""Pathwise mild solutions and random attractors for parabolic SPDEs."""
__version__ = "0.1.0"
