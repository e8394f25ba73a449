"""Shared-control telelocomotion testbed for a planar wheeled inverted pendulum."""

__version__ = "0.1.0"
