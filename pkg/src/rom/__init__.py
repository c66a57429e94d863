"""rom: streaming overthinking detection and intervention engine."""

__version__ = "0.1.0"
