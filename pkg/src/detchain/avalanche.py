"""Avalanche multiplication region: coupled advection-reaction equations.

    dn_e/dt = -v dn_e/dz + alpha n_e n_b
    dn_b/dt = -alpha n_e n_b

n_e drifts toward z_max at speed v and excites bound electrons where it
passes; n_b only ever decreases.  Densities are per unit length, so
alpha carries units length/time (fixed by the bilinear form).  The
advection is first-order upwind in flux form; the shared reaction term is
evaluated once per step, which makes the local identity
d(n_e + n_b)/dt + v dn_e/dz = 0 hold discretely to rounding and closes the
global charge balance (seed + consumed bound = exited + still in domain).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

__all__ = ["AvalancheState", "step_avalanche", "run_to_quiescence", "gain", "write_field_csv"]


@dataclass(frozen=True)
class AvalancheState:
    z: np.ndarray
    n_e: np.ndarray
    n_b: np.ndarray
    v: float
    alpha_rate: float
    exited_charge: float = 0.0
    injected_charge: float = 0.0
    consumed_bound: float = 0.0
    clamp_events: int = 0
    time: float = 0.0

    def __post_init__(self):
        for name in ("z", "n_e", "n_b"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.v <= 0:
            raise ValueError("drift speed must be positive")
        if self.alpha_rate < 0:
            raise ValueError("alpha_rate must be non-negative")
        if np.any(self.n_e < 0) or np.any(self.n_b < 0):
            raise ValueError("densities must be non-negative")

    @classmethod
    def seeded(
        cls,
        n_cells: int,
        length: float,
        v: float,
        alpha_rate: float,
        bound_density,
        seed_charge: float = 1.0,
        seed_center: float = 0.1,
        seed_width: float = 0.02,
    ) -> "AvalancheState":
        """Gaussian seed pulse of total charge seed_charge on a fresh region."""
        dz = length / n_cells
        z = (np.arange(n_cells) + 0.5) * dz
        pulse = np.exp(-((z - seed_center * length) ** 2) / (2.0 * (seed_width * length) ** 2))
        total = pulse.sum() * dz
        n_e = seed_charge * pulse / total if total > 0 else np.zeros(n_cells)
        n_b = np.full(n_cells, float(bound_density)) if np.isscalar(bound_density) else np.asarray(bound_density, float)
        return cls(z, n_e, n_b, v, alpha_rate, injected_charge=seed_charge)

    @property
    def dz(self) -> float:
        return float(self.z[1] - self.z[0])

    def charge_in_domain(self) -> float:
        return float(self.n_e.sum() * self.dz)

    def bound_charge(self) -> float:
        return float(self.n_b.sum() * self.dz)

    def conservation_residual(self) -> float:
        """(seed + consumed bound) - (exited + in domain), relative to seed."""
        lhs = self.injected_charge + self.consumed_bound
        rhs = self.exited_charge + self.charge_in_domain()
        return (lhs - rhs) / max(self.injected_charge, 1e-300)

    def is_quiescent(self, tol: float = 1e-12) -> bool:
        return self.charge_in_domain() <= tol * max(self.injected_charge, 1e-300)


def step_avalanche(state: AvalancheState, dt: float, inflow: float = 0.0) -> AvalancheState:
    """Advance by dt: upwind advection (CFL v dt/dz <= 1) plus reaction.

    ``inflow`` is the excited density entering at z = 0.  Negative densities
    produced by the explicit reaction are clamped at zero and counted.
    """
    dz = state.dz
    cfl = state.v * dt / dz
    if cfl > 1.0 + 1e-12:
        raise ValueError(f"CFL violation: v dt / dz = {cfl:.4f} > 1")
    n_e, n_b = state.n_e, state.n_b
    reaction = state.alpha_rate * n_e * n_b

    upstream = np.concatenate([[inflow], n_e[:-1]])
    advected = n_e - cfl * (n_e - upstream)
    outflow_charge = state.v * dt * n_e[-1]
    inflow_charge = state.v * dt * inflow

    new_e = advected + dt * reaction
    new_b = n_b - dt * reaction

    clamps = int(np.sum(new_e < 0)) + int(np.sum(new_b < 0))
    consumed = float(reaction.sum() * dz * dt)
    new_e = np.clip(new_e, 0.0, None)
    new_b = np.clip(new_b, 0.0, None)

    return replace(
        state,
        n_e=new_e,
        n_b=new_b,
        exited_charge=state.exited_charge + outflow_charge,
        injected_charge=state.injected_charge + inflow_charge,
        consumed_bound=state.consumed_bound + consumed,
        clamp_events=state.clamp_events + clamps,
        time=state.time + dt,
    )


def run_to_quiescence(
    state: AvalancheState,
    dt: Optional[float] = None,
    max_time: Optional[float] = None,
    record_every: int = 0,
):
    """Step until the excited charge has left the region.

    Returns (final_state, outflow_waveform, snapshots) where the waveform is
    an (n_steps, 2) array of (t, outflow current v * n_e(z_max)) and
    snapshots is a list of (t, n_e, n_b) recorded every ``record_every``
    steps (empty when 0).
    """
    dz = state.dz
    dt = 0.8 * dz / state.v if dt is None else dt
    length = state.z[-1] + 0.5 * dz
    max_time = 20.0 * length / state.v if max_time is None else max_time
    waveform = []
    snapshots = []
    step = 0
    while not state.is_quiescent():
        if state.time > max_time:
            raise RuntimeError("avalanche run did not reach quiescence within max_time")
        waveform.append((state.time, state.v * state.n_e[-1]))
        if record_every and step % record_every == 0:
            snapshots.append((state.time, state.n_e.copy(), state.n_b.copy()))
        state = step_avalanche(state, dt)
        step += 1
    waveform.append((state.time, state.v * state.n_e[-1]))
    return state, np.asarray(waveform), snapshots


def gain(state: AvalancheState) -> float:
    """Charge exiting at z_max over seed charge; requires a quiescent run."""
    if not state.is_quiescent(tol=1e-9):
        raise ValueError("gain requires a quiescent run (excited charge still in domain)")
    if state.injected_charge <= 0:
        raise ValueError("no seed charge was injected")
    return state.exited_charge / state.injected_charge


def write_field_csv(path, z: np.ndarray, snapshots) -> None:
    """Space-time dump rows: t, z, n_e, n_b."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "z", "n_e", "n_b"])
        for t, n_e, n_b in snapshots:
            for zi, ei, bi in zip(z, n_e, n_b):
                writer.writerow([f"{t:.9g}", f"{zi:.9g}", f"{ei:.9g}", f"{bi:.9g}"])
