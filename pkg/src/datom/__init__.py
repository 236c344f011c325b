"""Single-channel signal decomposition with detector-atom networks."""

__version__ = "0.1.0"
