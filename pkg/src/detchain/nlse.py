"""Nonlinear feedback model: electron wave function with a self-generated potential.

The lattice responds to the electron charge density, which feeds back into
the Schroedinger equation.  In the quasi-static simplification the potential
relaxes toward a local cubic attraction:

    i hbar dpsi/dt = (T + V) psi,
    dV/dt = (V_target - V) / tau_V,      V_target = -g_f |psi|^2.

tau_V = 0 means the fully quasi-static limit V = V_target.  The potential is
real, so the exact flow preserves the norm; the integrator tolerance keeps
the drift within 1e-7 for default settings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bath import SpatialGrid, kinetic_hamiltonian
from .constants import HBAR
from .numerics import integrate_ode

__all__ = ["FeedbackKernel", "evolve_feedback_nlse"]


@dataclass(frozen=True)
class FeedbackKernel:
    """Local cubic attraction of strength g_f, relaxing on timescale tau_V."""

    mass: float
    strength: float
    relax_time: float = 0.0

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.relax_time < 0:
            raise ValueError("relax_time must be non-negative")


def evolve_feedback_nlse(
    psi: np.ndarray,
    feedback: FeedbackKernel,
    t: float,
    grid: SpatialGrid,
    tol: float = 1e-9,
    v_initial: np.ndarray | None = None,
    return_potential: bool = False,
):
    """Evolve a normalized wave function under the feedback potential for time t.

    ``psi`` is in the orthonormal discrete basis; the local density that
    sources the potential is |psi_i|^2 / dx.
    """
    psi = np.asarray(psi, dtype=complex)
    if abs(np.vdot(psi, psi).real - 1.0) > 1e-8:
        raise ValueError("psi must be normalized")
    h = kinetic_hamiltonian(grid, feedback.mass)
    n = grid.n
    g_f = feedback.strength
    tau_v = feedback.relax_time

    def target(u):
        return -g_f * (np.abs(u) ** 2) / grid.dx

    if tau_v == 0.0:

        def rhs(_t, y):
            v = target(y)
            return (-1j / HBAR) * (h @ y + v * y)

        out = integrate_ode(psi, rhs, 0.0, t, tol=tol)
        return (out, target(out)) if return_potential else out

    v0 = target(psi) if v_initial is None else np.asarray(v_initial, dtype=float)
    y0 = np.concatenate([psi, v0.astype(complex)])

    def rhs(_t, y):
        u, v = y[:n], y[n:].real
        du = (-1j / HBAR) * (h @ u + v * u)
        dv = (target(u) - v) / tau_v
        return np.concatenate([du, dv.astype(complex)])

    y1 = integrate_ode(y0, rhs, 0.0, t, tol=tol)
    psi_out, v_out = y1[:n], y1[n:].real
    return (psi_out, v_out) if return_potential else psi_out
