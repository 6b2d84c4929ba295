"""River-network streamflow under compound-Poisson rainfall."""

__version__ = "0.1.0"
