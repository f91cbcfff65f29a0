"""Random-field Ising model laboratory: exact and Monte Carlo engines, replica observables, IBP checks."""

__version__ = "0.1.0"
