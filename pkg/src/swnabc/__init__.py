"""Weight discovery for stochastic workflow nets via simulation and ABC-SMC."""

__version__ = "0.1.0"
