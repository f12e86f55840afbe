"""Maximum-principle optimal control of interpolated quantum Hamiltonians."""

__version__ = "0.1.0"
