"""Certified closed boundary value problems for mixed-type equations on a cylinder."""

__version__ = "0.1.0"
