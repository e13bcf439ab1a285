"""Partitioned steady FSI with coupled adjoint shape sensitivities."""

__version__ = "0.1.0"
