"""Whitney covers, maximal-function weights, solenoidal truncation and p-Stokes solvers on 3D grids."""

__version__ = "0.1.0"
