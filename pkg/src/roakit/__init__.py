"""roakit: region-of-attraction estimation from simulated trajectory data."""

__version__ = "0.1.0"
