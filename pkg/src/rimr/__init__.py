"""Two-stage mmWave radar to 3D point-cloud reconstruction, from radar synthesis to refined clouds."""

__version__ = "0.1.0"
