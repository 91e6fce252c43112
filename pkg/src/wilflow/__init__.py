"""wilflow: energy-stable parametric finite elements for Willmore flow."""

__all__ = ["__version__"]

__version__ = "0.1.0"
