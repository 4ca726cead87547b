"""Stereographic coordinates on the Riemann sphere.

A nonzero complex number s is represented by the angle pair (theta, phi)
with theta = arg(s) and |s| = tan(phi/2 + pi/4), so the unit circle maps to
the equator phi = 0, the origin to the south pole and infinity to the north
pole (both poles excluded).  The angle box (-pi, pi] x (-pi/2, pi/2) gives a
bounded, singularity-free domain for networks that have to emit or consume
points of the complex plane.
"""

import numpy as np


def to_sphere(s):
    """Map complex s (scalar or array) to sphere angles (theta, phi).

    theta is the full-quadrant argument of s.  phi equals
    arcsin((|s|^2 - 1)/(|s|^2 + 1)), evaluated as 2*arctan|s| - pi/2: the
    same function, but without the catastrophic quantization of the arcsin
    argument near +-1, which costs five decimal digits at |s| ~ 1e6.
    s = 0 is outside the domain (phi would hit the excluded south pole).
    """
    s = np.asarray(s)
    theta = np.arctan2(s.imag, s.real)
    phi = 2.0 * np.arctan(np.abs(s)) - 0.5 * np.pi
    return theta, phi


def from_sphere(theta, phi):
    """Inverse of to_sphere: s = tan(phi/2 + pi/4) * exp(i*theta)."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.tan(0.5 * phi + 0.25 * np.pi) * np.exp(1j * theta)


def phi_cap(max_modulus):
    """Latitude bound phi_max such that phi <= phi_max implies |s| <= max_modulus.

    Clamping a network's phi output to (-pi/2, phi_cap(r)) guarantees the
    decoded point satisfies |s| <= r, which acts as a low-pass constraint on
    the frequencies the model can express.
    """
    r = np.asarray(max_modulus, dtype=float)
    if np.any(r <= 0.0):
        raise ValueError("max_modulus must be positive")
    return 2.0 * np.arctan(r) - 0.5 * np.pi
