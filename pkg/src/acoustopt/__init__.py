"""Topology optimization of an axisymmetric acoustic transition section."""
