"""Multi-agent trajectory forecasting with skeletal keypoint features."""

__version__ = "0.1.0"
