"""Dense radio maps from a few measured pixels, with a kriging baseline for comparison."""

__version__ = "0.1.0"
