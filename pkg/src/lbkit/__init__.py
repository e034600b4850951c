"""lbkit: screened kinetic collision operators, their linearization and limits."""

__version__ = "0.1.0"
