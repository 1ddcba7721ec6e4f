"""Virtual incremental-capacity curves and SOH estimation from dynamic charging."""

__version__ = "0.1.0"
