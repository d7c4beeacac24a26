"""Physical constants and unit helpers (SI throughout, energies in GHz*h at the edges)."""

import numpy as np
from scipy import constants as sc

H = sc.h
HBAR = sc.hbar
KB = sc.k
E_CHARGE = sc.e
PHI0 = sc.h / (2 * sc.e)  # flux quantum, Wb
PHI0_RED = sc.hbar / (2 * sc.e)  # reduced flux quantum, Wb/rad

GHZ = 1e9


def ghz_to_joule(e_ghz):
    return e_ghz * GHZ * H


def joule_to_ghz(e_joule):
    return e_joule / (GHZ * H)


def dbm_to_watt(p_dbm):
    return 1e-3 * 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def watt_to_dbm(p_watt):
    return 10.0 * np.log10(np.asarray(p_watt, dtype=float) / 1e-3)


def flux_to_phase(flux_over_phi0):
    """Phi_ext/Phi_0 fraction -> reduced external phase phi_ext in radians."""
    return 2 * np.pi * flux_over_phi0


def phase_to_flux(phi_ext):
    return phi_ext / (2 * np.pi)
