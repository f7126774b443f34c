"""Extended-object tracking with random matrices under non-linear extent transitions."""

__version__ = "0.1.0"
