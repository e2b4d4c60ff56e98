"""Numerical Hermitian-Einstein metrics and semistability tests for Higgs bundles on a flat torus."""
__version__ = "0.1.0"
