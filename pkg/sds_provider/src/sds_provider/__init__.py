"""Reference-image sidecar: depth-conditioned diffusion refinement behind a
newline-delimited JSON stdio protocol, with a dependency-free --dry-run echo
mode for integration testing."""

__version__ = "0.1.0"
