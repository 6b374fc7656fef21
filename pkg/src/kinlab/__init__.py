"""Hard-sphere kinetic theory laboratory: molecular dynamics, cluster graphs, estimators and a Boltzmann solver."""

__version__ = "0.1.0"
