"""Raw video super-resolution with co-aligned Bayer and sub-frame branches."""

__version__ = "0.1.0"
