"""Photon-electron superposition amplitudes during the interaction window.

One bound electron coupled to the radiation mode reduces to a two-level
problem for the amplitudes (alpha, beta):

    i hbar d(alpha)/dt = g* beta
    i hbar d(beta)/dt  = g  alpha

N equivalent electrons behave like a single electron with coupling
sqrt(N) g, and M detector sites give the coupled system

    i hbar d(alpha)/dt   = sum_n g_n* beta_n
    i hbar d(beta_n)/dt  = g_n alpha

whose excitation amplitudes stay proportional to the couplings at all
times.  Energy conservation is imposed up front, so the oscillatory
detuning factors are absent and the photon frequency / level energies are
carried only as report metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .constants import HBAR
from .numerics import integrate_ode

__all__ = [
    "AmplitudeState",
    "CouplingModel",
    "evolve_two_level",
    "evolve_equivalent_electrons",
    "evolve_detector_array",
]

_NORM_TOL = 1e-6


@dataclass(frozen=True)
class AmplitudeState:
    """Amplitudes of the no-absorption state (alpha) and per-site excitations."""

    alpha: complex
    betas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "betas", np.atleast_1d(np.asarray(self.betas, dtype=complex)))

    @classmethod
    def initial(cls, n_sites: int = 1) -> "AmplitudeState":
        return cls(1.0 + 0.0j, np.zeros(n_sites, dtype=complex))

    def norm_sq(self) -> float:
        return abs(self.alpha) ** 2 + float(np.sum(np.abs(self.betas) ** 2))

    def validate(self, tol: float = _NORM_TOL) -> None:
        if abs(self.norm_sq() - 1.0) > tol:
            raise ValueError(f"state not normalized: |alpha|^2 + sum|beta|^2 = {self.norm_sq():.12f}")

    def click_weights(self) -> np.ndarray:
        """Per-site excitation probabilities |beta_n|^2."""
        return np.abs(self.betas) ** 2


@dataclass(frozen=True)
class CouplingModel:
    """Effective couplings g_n (energy units), interaction time, and level metadata."""

    g_tilde: np.ndarray
    tau: float
    n_electrons: int = 1
    photon_frequency: float = 0.0
    level_energy_ground: float = 0.0
    level_energy_excited: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "g_tilde", np.atleast_1d(np.asarray(self.g_tilde, dtype=complex)))
        if self.n_electrons < 1:
            raise ValueError("n_electrons must be >= 1")

    @classmethod
    def two_level(cls, g: complex, tau: float, **meta) -> "CouplingModel":
        return cls(np.array([g]), tau, **meta)

    @classmethod
    def equivalent_electrons(cls, g: complex, n_electrons: int, tau: float, **meta) -> "CouplingModel":
        """N equivalent electrons: effective coupling is exactly sqrt(N) g."""
        if n_electrons < 1:
            raise ValueError("n_electrons must be >= 1")
        return cls(np.array([np.sqrt(n_electrons) * g]), tau, n_electrons=n_electrons, **meta)

    @classmethod
    def detector_array(
        cls, amplitudes: Sequence[complex], g_scale: complex, tau: float, n_electrons: int = 1, **meta
    ) -> "CouplingModel":
        """Site couplings proportional to the photon amplitude at each detector."""
        amps = np.asarray(amplitudes, dtype=complex)
        g = np.sqrt(n_electrons) * g_scale * amps
        return cls(g, tau, n_electrons=n_electrons, **meta)

    @property
    def n_sites(self) -> int:
        return len(self.g_tilde)

    def aggregate_coupling(self) -> float:
        """Magnitude of the equivalent single-site coupling sqrt(sum |g_n|^2)."""
        return float(np.sqrt(np.sum(np.abs(self.g_tilde) ** 2)))


def _evolve(state: AmplitudeState, g: np.ndarray, t: float, tol: float) -> AmplitudeState:
    y0 = np.concatenate(([state.alpha], state.betas))
    g_conj = g.conj()

    def rhs(_t, y):
        dalpha = -1j / HBAR * np.dot(g_conj, y[1:])
        dbeta = -1j / HBAR * g * y[0]
        return np.concatenate(([dalpha], dbeta))

    y1 = integrate_ode(y0, rhs, 0.0, t, tol=tol)
    return AmplitudeState(complex(y1[0]), y1[1:])


def evolve_two_level(state: AmplitudeState, coupling: CouplingModel, t: float, tol: float = 1e-11) -> AmplitudeState:
    """Evolve the single-site two-level amplitudes for time t (negative t reverses)."""
    if coupling.n_sites != 1:
        raise ValueError("evolve_two_level requires exactly one site")
    state.validate()
    return _evolve(state, coupling.g_tilde, t, tol)


def evolve_equivalent_electrons(
    state: AmplitudeState, coupling: CouplingModel, t: float, tol: float = 1e-11
) -> AmplitudeState:
    """Evolve (alpha, beta_tilde) for N equivalent electrons.

    The trajectory equals the two-level one with the scaled coupling; the
    per-electron amplitude is beta_tilde / sqrt(N) up to the absorbed
    positional phase.
    """
    if coupling.n_sites != 1:
        raise ValueError("equivalent-electron reduction carries a single aggregate site")
    state.validate()
    return _evolve(state, coupling.g_tilde, t, tol)


def per_electron_beta(state: AmplitudeState, coupling: CouplingModel) -> np.ndarray:
    return state.betas / np.sqrt(coupling.n_electrons)


def evolve_detector_array(
    state: AmplitudeState, coupling: CouplingModel, t: float, tol: float = 1e-11
) -> AmplitudeState:
    """Evolve alpha and all site amplitudes beta_n for an M-detector array."""
    if coupling.n_sites < 1:
        raise ValueError("need at least one detector site")
    if len(state.betas) != coupling.n_sites:
        raise ValueError("state and coupling disagree on the number of sites")
    state.validate()
    return _evolve(state, coupling.g_tilde, t, tol)
