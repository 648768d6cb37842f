"""Learned raw-to-sRGB ISP with white-balance and global-scene conditioning."""

__version__ = "0.1.0"
