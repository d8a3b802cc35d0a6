"""LiDAR-conditioned RGB synthesis with luminance-aware fusion for VLM inputs."""

__version__ = "0.1.0"
