"""Event-paired Barlow Twins representations for seismic event classification."""

__version__ = "0.1.0"
