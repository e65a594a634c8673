"""Monte Carlo laboratory for diffusions in spectrally negative Levy potentials."""

__version__ = "0.1.0"
