"""Heat-dissipation flow matching: spectral operators, paths, training, sampling and diagnostics."""

__version__ = "0.1.0"
