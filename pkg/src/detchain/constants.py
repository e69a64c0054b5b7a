"""Physical constants and unit conventions.

Internally every module works in natural units hbar = k_B = 1 with the
electron mass and bath temperature configurable.  Lengths are naturally
measured in units of the localization length ``lam = 1/sqrt(4 m T)`` and
times in units of the thermal time ``1/T``; SI conversion happens only in
the reporting layer (thermal_scales, Landauer ledger, the `scales` CLI).
"""

from scipy import constants as _si

HBAR_SI = _si.hbar          # J s
H_SI = _si.h                # J s
K_B_SI = _si.k              # J / K
M_ELECTRON_SI = _si.m_e     # kg
E_CHARGE_SI = _si.e         # C
C_LIGHT_SI = _si.c          # m / s

LN2 = 0.6931471805599453

# Natural-unit values used throughout the quantum stages.
HBAR = 1.0
K_B = 1.0
E_CHARGE = 1.0
