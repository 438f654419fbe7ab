"""Mass-lumped tetrahedral finite elements with quadrature-based stiffness kernels."""

__version__ = "0.1.0"
