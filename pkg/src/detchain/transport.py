"""Semiclassical conduction: Drude formula and the 1D Boltzmann equation.

The distribution f(k) lives on a uniform k-grid with parabolic dispersion
eps_k = hbar^2 k^2 / 2m and velocity v_k = hbar k / m.  A uniform field
accelerates electrons (hbar dk/dt = eE, e = 1 internally); spatial
gradients are out of scope here.  The default collision operator is the
relaxation-time approximation with a density-projected equilibrium, which
conserves particle number exactly.  A full four-term electron-phonon
collision integral with Pauli blocking and Bose factors is available on
small grids; its transition table matches energy and momentum conservation
on-grid (nearest bin), with the Bose occupancy evaluated at the matched
transition energy so that a Fermi-Dirac distribution is a machine-precision
fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .constants import E_CHARGE, HBAR, K_B

__all__ = [
    "DistributionFunction",
    "PhononBath",
    "fermi_dirac",
    "drude_conductivity",
    "step_boltzmann_rta",
    "collision_integral_phonon",
    "step_boltzmann_phonon",
    "relax_to_steady_state",
    "field_sweep_table",
]

_MAX_PHONON_GRID = 256


def fermi_dirac(eps: np.ndarray, temperature: float, mu: float = 0.0) -> np.ndarray:
    return 1.0 / (np.exp((eps - mu) / (K_B * temperature)) + 1.0)


@dataclass
class DistributionFunction:
    """Occupation f(k) in [0, 1] on a uniform k-grid."""

    f: np.ndarray
    k: np.ndarray
    mass: float

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.k = np.asarray(self.k, dtype=float)
        if self.f.shape != self.k.shape:
            raise ValueError("f and k must have the same shape")
        if np.any(self.f < -1e-12) or np.any(self.f > 1.0 + 1e-12):
            raise ValueError("occupations must lie in [0, 1]")

    @classmethod
    def equilibrium(cls, k: np.ndarray, mass: float, temperature: float, mu: float = 0.0):
        k = np.asarray(k, dtype=float)
        eps = HBAR**2 * k**2 / (2.0 * mass)
        return cls(fermi_dirac(eps, temperature, mu), k, mass)

    @property
    def dk(self) -> float:
        return float(self.k[1] - self.k[0])

    @property
    def energies(self) -> np.ndarray:
        return HBAR**2 * self.k**2 / (2.0 * self.mass)

    @property
    def velocities(self) -> np.ndarray:
        return HBAR * self.k / self.mass

    def density(self) -> float:
        return float(np.sum(self.f) * self.dk)

    def current(self) -> float:
        return float(E_CHARGE * np.sum(self.velocities * self.f) * self.dk)

    def drift_velocity(self) -> float:
        n = self.density()
        return self.current() / (E_CHARGE * n) if n > 0 else 0.0


@dataclass(frozen=True)
class PhononBath:
    """Single acoustic branch in equilibrium: omega_q = c_s |q|."""

    temperature: float
    sound_speed: float
    w0: float

    def __post_init__(self):
        if self.temperature <= 0 or self.sound_speed <= 0 or self.w0 < 0:
            raise ValueError("temperature and sound speed must be positive, w0 >= 0")

    def occupancy(self, q) -> np.ndarray:
        """Bose-Einstein occupation of mode q (diverges at q = 0)."""
        energy = HBAR * self.sound_speed * np.abs(np.asarray(q, dtype=float))
        return 1.0 / np.expm1(energy / (K_B * self.temperature))


def drude_conductivity(n: float, tau: float, mass: float) -> float:
    """sigma = n e^2 tau / m."""
    if n <= 0 or tau <= 0 or mass <= 0:
        raise ValueError("n, tau, and mass must be positive")
    return n * E_CHARGE**2 * tau / mass


def step_boltzmann_rta(
    f: DistributionFunction,
    field: float,
    tau: float,
    dt: float,
    f_eq: np.ndarray,
) -> DistributionFunction:
    """One step of field drive + relaxation toward the (density-matched) equilibrium.

    Advection in k is first-order upwind with zero inflow; the relaxation
    substep is applied with its exact exponential factor toward f_eq scaled
    to the current density, so particle number is conserved to rounding.
    """
    if dt >= tau / 10.0:
        raise ValueError("dt must be smaller than tau/10")
    a = E_CHARGE * field / HBAR  # dk/dt
    dk = f.dk
    cfl = abs(a) * dt / dk
    if cfl > 1.0:
        raise ValueError(f"CFL violation: |eE/hbar| dt / dk = {cfl:.3f} > 1")

    fv = f.f
    if a >= 0:
        upstream = np.concatenate([[0.0], fv[:-1]])
        advected = fv - cfl * (fv - upstream)
    else:
        downstream = np.concatenate([fv[1:], [0.0]])
        advected = fv - cfl * (downstream - fv)

    eq = np.asarray(f_eq, dtype=float)
    eq_density = eq.sum()
    target = eq * (advected.sum() / eq_density) if eq_density > 0 else eq
    decay = np.exp(-dt / tau)
    out = target + (advected - target) * decay
    return DistributionFunction(np.clip(out, 0.0, 1.0), f.k, f.mass)


def relax_to_steady_state(
    f: DistributionFunction,
    field: float,
    tau: float,
    dt: float,
    f_eq: np.ndarray,
    t_total: Optional[float] = None,
) -> DistributionFunction:
    t_total = 20.0 * tau if t_total is None else t_total
    steps = int(np.ceil(t_total / dt))
    for _ in range(steps):
        f = step_boltzmann_rta(f, field, tau, dt, f_eq)
    return f


def _transition_table(k_bytes: bytes, n: int, dk: float, k0: float, mass: float, c_s: float):
    k = np.frombuffer(k_bytes).reshape(n)
    eps = HBAR**2 * k**2 / (2.0 * mass)
    # Emission channels i -> j with eps_i > eps_j; the reverse is absorption.
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    mask = eps[ii] > eps[jj]
    ii, jj = ii[mask], jj[mask]
    d_eps = eps[ii] - eps[jj]
    phonon = HBAR * c_s * np.abs(k[ii] - k[jj])
    ok = np.abs(d_eps - phonon) <= 0.5 * HBAR * c_s * dk
    return ii[ok], jj[ok], d_eps[ok]


@lru_cache(maxsize=16)
def _cached_table(k_bytes: bytes, n: int, dk: float, k0: float, mass: float, c_s: float):
    return _transition_table(k_bytes, n, dk, k0, mass, c_s)


def collision_integral_phonon(f: DistributionFunction, bath: PhononBath) -> np.ndarray:
    """df/dt from the four electron-phonon gain/loss terms, constant |W| = w0.

    For each on-grid transition pair (emission i->j and its reverse
    absorption j->i) the rates carry the Pauli factors [1-f] and phonon
    factors [1+g], g, with g evaluated at the matched transition energy.
    Gain and loss enter in exactly cancelling pairs, so particle number is
    conserved identically, and f = Fermi-Dirac(T_bath) is stationary.
    """
    n = len(f.k)
    if n > _MAX_PHONON_GRID:
        raise ValueError(f"phonon collision integral limited to {_MAX_PHONON_GRID} k-points")
    ii, jj, d_eps = _cached_table(
        f.k.tobytes(), n, f.dk, float(f.k[0]), f.mass, bath.sound_speed
    )
    df = np.zeros(n)
    if len(ii) == 0:
        return df
    g = 1.0 / np.expm1(d_eps / (K_B * bath.temperature))
    fv = f.f
    r_emit = bath.w0 * fv[ii] * (1.0 - fv[jj]) * (1.0 + g)
    r_abs = bath.w0 * fv[jj] * (1.0 - fv[ii]) * g
    np.add.at(df, jj, r_emit)
    np.add.at(df, ii, -r_emit)
    np.add.at(df, ii, r_abs)
    np.add.at(df, jj, -r_abs)
    return df


def step_boltzmann_phonon(
    f: DistributionFunction, field: float, bath: PhononBath, dt: float
) -> DistributionFunction:
    """Field drive plus the full phonon collision integral (explicit Euler)."""
    a = E_CHARGE * field / HBAR
    cfl = abs(a) * dt / f.dk
    if cfl > 1.0:
        raise ValueError(f"CFL violation: {cfl:.3f} > 1")
    fv = f.f
    if a >= 0:
        upstream = np.concatenate([[0.0], fv[:-1]])
        advected = fv - cfl * (fv - upstream)
    else:
        downstream = np.concatenate([fv[1:], [0.0]])
        advected = fv - cfl * (downstream - fv)
    tmp = DistributionFunction(np.clip(advected, 0.0, 1.0), f.k, f.mass)
    out = tmp.f + dt * collision_integral_phonon(tmp, bath)
    return DistributionFunction(np.clip(out, 0.0, 1.0), f.k, f.mass)


def field_sweep_table(
    f_eq: DistributionFunction, fields, tau: float, dt: float
) -> np.ndarray:
    """Rows (E, current, sigma_estimate) from RTA steady states."""
    rows = []
    for field in fields:
        steady = relax_to_steady_state(
            DistributionFunction(f_eq.f.copy(), f_eq.k, f_eq.mass),
            field, tau, dt, f_eq.f,
        )
        j = steady.current()
        rows.append((field, j, j / field if field != 0 else np.nan))
    return np.asarray(rows)
