"""crossgo: a Go player that moves on a single policy-network forward pass."""

__version__ = "0.1.0"
