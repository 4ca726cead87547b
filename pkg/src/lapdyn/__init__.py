"""Learning differential equations from trajectories via Laplace-domain representations."""

__version__ = "0.1.0"

from .sphere import from_sphere, phi_cap, to_sphere

__all__ = ["to_sphere", "from_sphere", "phi_cap", "__version__"]
