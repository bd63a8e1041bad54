"""Monte Carlo and inference tools for an idler-side collapse experiment."""

__version__ = "0.1.0"
