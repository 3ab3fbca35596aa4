"""Two-community SIR epidemics with travel."""

__version__ = "0.1.0"
