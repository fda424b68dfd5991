"""Centerline graphs and morphometric features for Circle of Willis masks."""

__version__ = "0.1.0"
