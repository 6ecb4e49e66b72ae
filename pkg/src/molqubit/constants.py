"""Physical constants and unit conventions.

Units used throughout the package:

- energies and frequencies: GHz (ordinary frequency, not angular)
- magnetic field: mT
- time: us
- distance: nm
- nuclear gyromagnetic ratios: MHz/T
- hyperfine tensors: MHz; nuclear pair tensors: kHz
"""

import scipy.constants as sc

#: Bohr magneton over Planck constant, GHz/mT (CODATA value of mu_B/h).
MU_B_GHZ_PER_MT = sc.physical_constants["Bohr magneton in Hz/T"][0] * 1e-12
#: Free-electron g-factor (magnitude).
G_FREE = 2.00231930436
#: mu_0 / (4 pi), T^2 m^3 / J.
MU0_OVER_4PI = sc.mu_0 / (4 * sc.pi)
#: Planck constant, J s.
PLANCK = sc.h

#: 1 us in ns; phases are 2 pi * f[GHz] * t[ns].
NS_PER_US = 1e3


def electron_gamma(g):
    """Electron gyromagnetic ratio g*mu_B/h in GHz/mT."""
    return g * MU_B_GHZ_PER_MT


def electron_gamma_mhz_per_t(g):
    """Electron gyromagnetic ratio in MHz/T (same units as nuclear tables)."""
    return electron_gamma(g) * 1e6
