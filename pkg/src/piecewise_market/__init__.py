"""Markets whose number of assets changes over time."""

__version__ = "0.1.0"
