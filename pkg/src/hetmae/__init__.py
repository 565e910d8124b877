"""Meta-path masked autoencoder for heterogeneous graphs."""

__version__ = "0.1.0"
