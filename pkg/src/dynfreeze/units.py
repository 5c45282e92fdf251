"""Unit conventions and physical constants.

Internal units are microseconds, nanometres, radians per microsecond and
microtesla. Configuration-facing quantities quoted in MHz are ordinary
frequencies and are converted with :func:`mhz_to_angular`.
"""

import math

TWO_PI = 2.0 * math.pi

#: Dipolar coupling prefactor J0 in rad/us * nm^3 (2 pi x 52 MHz nm^3).
J0_NV = TWO_PI * 52.0

#: NV electron gyromagnetic ratio in rad/us per uT (2 pi x 28.03 GHz/T).
GAMMA_NV = TWO_PI * 28.03e-3


def mhz_to_angular(f_mhz):
    """Ordinary frequency in MHz -> angular frequency in rad/us."""
    return TWO_PI * f_mhz


def angular_to_mhz(w):
    """Angular frequency in rad/us -> ordinary frequency in MHz."""
    return w / TWO_PI
