"""Heat-bath-induced localization of the conduction electron.

The dissipator is the Lindblad form of the extended Caldeira-Leggett
generator with jump operator

    A = x/lam + lam d/dx,        lam = hbar / sqrt(4 m k_B T),

whose continuum eigenfunctions are Gaussian packets of width lam.  The
friction and momentum-diffusion pieces of the position-space generator are
absorbed exactly into this A form, which is the single source of truth here.

The electron Hilbert space is hybrid: one bound level |g> (bath-dark,
A|g> = A†|g> = 0) plus a periodic 1D grid for the conduction band.  States
and density-matrix blocks are stored in the orthonormal discrete basis
e_i = |x_i>/sqrt(dx); kernel-convention quantities (densities per length)
are exposed through helper methods.

Discretization note: A is built as the Gauss-weighted central difference
lam * G^-1 D G with G = diag(exp(x^2/2 lam^2)).  Displaced/moving sampled
Gaussians are then exact eigenvectors of the interior operator with
eigenvalue (lam/dx) sinh((x0/lam^2 + ik) dx) -> x0/lam + i k lam + O(dx^2),
and the width-lam packet at rest is an exact discrete stationary state of
the dissipator, as it is in the continuum.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .constants import HBAR_SI, H_SI, K_B_SI, HBAR, K_B
from .numerics import integrate_ode, hermitize

__all__ = [
    "BathSpec",
    "SpatialGrid",
    "make_grid",
    "LocalizationOperator",
    "DissipativeOps",
    "collapse_operators",
    "HybridDensityMatrix",
    "gaussian_packet",
    "packet_centroid",
    "packet_width",
    "dissipator",
    "evolve_master",
    "blockdiag_distance",
    "decoherence_time",
    "thermal_scales",
    "write_snapshot_csv",
]


@dataclass(frozen=True)
class BathSpec:
    """Phonon bath parameters in natural units (hbar = k_B = 1)."""

    temperature: float
    gamma: float
    mass: float

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.mass <= 0:
            raise ValueError("mass must be positive")

    @property
    def lam(self) -> float:
        """Localization length hbar/sqrt(4 m k_B T), half the thermal wavelength."""
        return HBAR / np.sqrt(4.0 * self.mass * K_B * self.temperature)

    @property
    def thermal_time(self) -> float:
        return HBAR / (K_B * self.temperature)


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform 1D grid, symmetric about the origin."""

    x: np.ndarray
    dx: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def extent(self) -> float:
        return self.n * self.dx


def make_grid(bath: BathSpec, n_points: int, extent_lambda: float = 16.0) -> SpatialGrid:
    """Grid spanning extent_lambda localization lengths, centered on zero."""
    if n_points < 2:
        raise ValueError("need at least 2 grid points")
    if extent_lambda < 16.0:
        warnings.warn(
            "grid extent below 16 localization lengths; packets may feel the boundary",
            stacklevel=2,
        )
    length = extent_lambda * bath.lam
    dx = length / n_points
    x = (np.arange(n_points) - n_points / 2 + 0.5) * dx
    return SpatialGrid(x, dx)


def _check_resolution(grid: SpatialGrid, lam: float) -> None:
    if grid.dx > lam / 4 + 1e-12 * lam:
        raise ValueError(
            f"grid too coarse: dx = {grid.dx:.4g} exceeds lam/4 = {lam / 4:.4g}"
        )


class LocalizationOperator:
    """Discretized A = x/lam + lam d/dx on a grid (Gauss-weighted difference form)."""

    def __init__(self, grid: SpatialGrid, lam: float):
        _check_resolution(grid, lam)
        self.grid = grid
        self.lam = lam
        n, x, dx = grid.n, grid.x, grid.dx
        a = np.zeros((n, n), dtype=complex)
        coeff = lam / (2.0 * dx)
        two_lam_sq = 2.0 * lam * lam
        for i in range(n):
            if i + 1 < n:
                a[i, i + 1] = coeff * np.exp((x[i + 1] ** 2 - x[i] ** 2) / two_lam_sq)
            if i - 1 >= 0:
                a[i, i - 1] = -coeff * np.exp((x[i - 1] ** 2 - x[i] ** 2) / two_lam_sq)
        self.matrix = a
        self.a_dag_a = hermitize(a.conj().T @ a)


def kinetic_hamiltonian(grid: SpatialGrid, mass: float) -> np.ndarray:
    """Free kinetic term -(hbar^2/2m) d^2/dx^2, 3-point stencil, periodic."""
    n = grid.n
    coeff = HBAR**2 / (2.0 * mass * grid.dx**2)
    h = np.zeros((n, n), dtype=complex)
    idx = np.arange(n)
    h[idx, idx] = 2.0 * coeff
    h[idx, (idx + 1) % n] = -coeff
    h[idx, (idx - 1) % n] = -coeff
    return h


@dataclass(frozen=True)
class DissipativeOps:
    """Grid operators driving one conduction-band block."""

    grid: SpatialGrid
    gamma: float
    a: np.ndarray
    a_dag_a: np.ndarray
    h: np.ndarray

    @property
    def n(self) -> int:
        return self.grid.n

    def h_eff(self) -> np.ndarray:
        """Non-Hermitian no-jump drift generator H - i hbar gamma/2 A†A."""
        return self.h - 0.5j * HBAR * self.gamma * self.a_dag_a


def collapse_operators(grid: SpatialGrid, bath: BathSpec, include_kinetic: bool = True) -> DissipativeOps:
    loc = LocalizationOperator(grid, bath.lam)
    if include_kinetic:
        h = kinetic_hamiltonian(grid, bath.mass)
    else:
        h = np.zeros((grid.n, grid.n), dtype=complex)
    return DissipativeOps(grid, bath.gamma, loc.matrix, loc.a_dag_a, h)


def gaussian_packet(
    grid: SpatialGrid, width: float, center: float = 0.0, momentum: float = 0.0
) -> np.ndarray:
    """Normalized Gaussian exp(-(x-x0)^2/2w^2 + ikx) in the orthonormal basis."""
    psi = np.exp(-((grid.x - center) ** 2) / (2.0 * width**2) + 1j * momentum * grid.x)
    return psi / np.linalg.norm(psi)


def packet_centroid(phi: np.ndarray, grid: SpatialGrid) -> float:
    w = np.abs(phi) ** 2
    s = w.sum()
    return float(np.dot(grid.x, w) / s) if s > 0 else float("nan")


def packet_width(phi: np.ndarray, grid: SpatialGrid) -> float:
    w = np.abs(phi) ** 2
    s = w.sum()
    if s <= 0:
        return float("nan")
    mean = np.dot(grid.x, w) / s
    var = np.dot((grid.x - mean) ** 2, w) / s
    return float(np.sqrt(var))


class HybridDensityMatrix:
    """Density matrix on {bound level} + {conduction grid}.

    Blocks are stored in the orthonormal discrete basis: rho_gg is the bound
    population, rho_ge[i] = <g|rho|e_i>, rho_ee[i,j] = <e_i|rho|e_j>, with
    trace = rho_gg + tr(rho_ee).
    """

    def __init__(self, rho_gg: float, rho_ge: np.ndarray, rho_ee: np.ndarray, grid: SpatialGrid):
        self.rho_gg = float(rho_gg)
        self.rho_ge = np.asarray(rho_ge, dtype=complex).copy()
        self.rho_ee = np.asarray(rho_ee, dtype=complex).copy()
        self.grid = grid
        if self.rho_ee.shape != (grid.n, grid.n) or self.rho_ge.shape != (grid.n,):
            raise ValueError("block shapes do not match grid size")

    @classmethod
    def from_pure(cls, alpha: complex, phi: np.ndarray, grid: SpatialGrid) -> "HybridDensityMatrix":
        """rho = |psi><psi| for psi = alpha|g> + phi (phi in the orthonormal basis)."""
        phi = np.asarray(phi, dtype=complex)
        norm_sq = abs(alpha) ** 2 + float(np.vdot(phi, phi).real)
        if abs(norm_sq - 1.0) > 1e-8:
            raise ValueError(f"hybrid state not normalized: |psi|^2 = {norm_sq:.12f}")
        return cls(abs(alpha) ** 2, alpha * phi.conj(), np.outer(phi, phi.conj()), grid)

    def trace(self) -> float:
        return self.rho_gg + float(np.trace(self.rho_ee).real)

    def conduction_trace(self) -> float:
        return float(np.trace(self.rho_ee).real)

    def interference_norm(self) -> float:
        return float(np.linalg.norm(self.rho_ge))

    def diag_density(self) -> np.ndarray:
        """Conduction density per unit length, rho_ee(x,x)."""
        return np.diag(self.rho_ee).real / self.grid.dx

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(hermitize(self.rho_ee))[0])

    def boundary_weight(self) -> float:
        d = np.diag(self.rho_ee).real
        return float(max(d[0], d[-1]))

    def to_matrix(self) -> np.ndarray:
        """Full (1+n) x (1+n) matrix with the bound level as index 0."""
        n = self.grid.n
        m = np.zeros((n + 1, n + 1), dtype=complex)
        m[0, 0] = self.rho_gg
        m[0, 1:] = self.rho_ge
        m[1:, 0] = self.rho_ge.conj()
        m[1:, 1:] = self.rho_ee
        return m

    def copy(self) -> "HybridDensityMatrix":
        return HybridDensityMatrix(self.rho_gg, self.rho_ge, self.rho_ee, self.grid)

    def validate(self, trace_tol: float = 1e-8, herm_tol: float = 1e-10, diag_tol: float = -1e-10) -> None:
        tr = self.trace()
        if abs(tr - 1.0) > trace_tol:
            raise ValueError(f"trace deviates from 1 by {tr - 1.0:.3e}")
        dev = np.max(np.abs(self.rho_ee - self.rho_ee.conj().T))
        if dev > herm_tol:
            raise ValueError(f"conduction block deviates from Hermiticity by {dev:.3e}")
        dmin = float(np.min(np.diag(self.rho_ee).real))
        if dmin < diag_tol:
            raise ValueError(f"negative conduction diagonal entry {dmin:.3e}")


def _derivative_blocks(rho: HybridDensityMatrix, ops: DissipativeOps):
    gamma, a, m, h = ops.gamma, ops.a, ops.a_dag_a, ops.h
    p = rho.rho_ee
    dp = (-1j / HBAR) * (h @ p - p @ h) + gamma * (
        a @ p @ a.conj().T - 0.5 * (m @ p + p @ m)
    )
    # Interference block: pure anticommutator damping, no Hamiltonian mixing.
    dv = -0.5 * gamma * (m.T @ rho.rho_ge)
    return dv, dp


def dissipator(rho: HybridDensityMatrix, bath: BathSpec, include_kinetic: bool = True) -> HybridDensityMatrix:
    """Time derivative of the hybrid density matrix under the bath generator.

    The conduction block evolves with the full Lindblad form
    -(i/hbar)[H, rho] + gamma (A rho A† - {A†A, rho}/2); the interference
    block decays as -(gamma/2){A†A, rho_int}; the bound population is
    constant.  The returned derivative is traceless to rounding.
    """
    ops = collapse_operators(rho.grid, bath, include_kinetic=include_kinetic)
    dv, dp = _derivative_blocks(rho, ops)
    return HybridDensityMatrix(0.0, dv, dp, rho.grid)


def evolve_master(
    rho: HybridDensityMatrix,
    bath: BathSpec,
    t: float,
    tol: float = 1e-9,
    include_kinetic: bool = True,
    snapshot_times: Optional[Sequence[float]] = None,
):
    """Evolve the hybrid density matrix for time t.

    The conduction block is integrated with the adaptive RK45 driver; the
    interference block has a closed autonomous flow and is propagated by the
    spectral decomposition of A†A, which makes its norm decay exactly
    monotone.  Returns the final state, or (final, [snapshots]) when
    snapshot_times is given.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    rho.validate(trace_tol=1e-6, herm_tol=1e-8, diag_tol=-1e-8)
    ops = collapse_operators(rho.grid, bath, include_kinetic=include_kinetic)
    gamma = ops.gamma
    evals, vecs = np.linalg.eigh(ops.a_dag_a.T)
    evals = np.clip(evals, 0.0, None)
    v_modes = vecs.conj().T @ rho.rho_ge

    def v_at(time: float) -> np.ndarray:
        return vecs @ (np.exp(-0.5 * gamma * evals * time) * v_modes)

    def rhs(_t, y):
        p = y.reshape(ops.n, ops.n)
        tmp = HybridDensityMatrix.__new__(HybridDensityMatrix)
        tmp.rho_gg, tmp.rho_ge, tmp.rho_ee, tmp.grid = 0.0, rho.rho_ge, p, rho.grid
        _, dp = _derivative_blocks(tmp, ops)
        return dp.ravel()

    times = list(snapshot_times) if snapshot_times is not None else None
    y0 = rho.rho_ee.ravel()
    if times:
        p_samples = integrate_ode(y0, rhs, 0.0, t, tol=tol, t_eval=list(times) + [t])
        snapshots = []
        for k, ts in enumerate(times):
            snap = HybridDensityMatrix(
                rho.rho_gg, v_at(ts), hermitize(p_samples[k].reshape(ops.n, ops.n)), rho.grid
            )
            snapshots.append(snap)
        p_final = p_samples[-1].reshape(ops.n, ops.n)
    else:
        p_final = integrate_ode(y0, rhs, 0.0, t, tol=tol).reshape(ops.n, ops.n)

    final = HybridDensityMatrix(rho.rho_gg, v_at(t), hermitize(p_final), rho.grid)
    if final.boundary_weight() > 1e-8 * max(np.max(np.diag(final.rho_ee).real), 1e-300):
        warnings.warn("conduction packet reached the grid boundary", stacklevel=2)
    if times:
        return final, snapshots
    return final


def blockdiag_distance(rho: HybridDensityMatrix) -> float:
    """Distance from the block-diagonal manifold: the interference-vector norm.

    The ge and eg blocks are conjugates, so the norm of one block is
    reported; it equals |alpha * beta| for a pure superposition and is zero
    iff the matrix is exactly block diagonal.
    """
    return rho.interference_norm()


def decoherence_time(state, ops: DissipativeOps) -> float:
    """Diagnostic 1/(gamma <A†A>) for a hybrid pure state or density matrix."""
    m = ops.a_dag_a
    if isinstance(state, HybridDensityMatrix):
        expect = float(np.trace(m @ state.rho_ee).real) / state.trace()
    else:
        phi = np.asarray(state, dtype=complex)
        expect = float(np.vdot(phi, m @ phi).real / np.vdot(phi, phi).real)
    rate = ops.gamma * expect
    return float("inf") if rate <= 0 else 1.0 / rate


def thermal_scales(
    temperature_kelvin: float,
    mass_kg: Optional[float] = None,
    particle: str = "massive",
    speed: Optional[float] = None,
) -> Tuple[float, float]:
    """Thermal wavelength and thermal time in SI units.

    Massive particles: lambda_th = h / sqrt(2 pi m k_B T).
    Massless (quasi)particles moving at speed c: lambda_th = pi^(2/3) hbar c / (k_B T).
    Both: t_th = hbar / (k_B T).
    """
    if temperature_kelvin <= 0:
        raise ValueError("temperature must be positive")
    kt = K_B_SI * temperature_kelvin
    if particle == "massive":
        if mass_kg is None or mass_kg <= 0:
            raise ValueError("massive particle needs a positive mass")
        lam_th = H_SI / np.sqrt(2.0 * np.pi * mass_kg * kt)
    elif particle == "massless":
        if speed is None or speed <= 0:
            raise ValueError("massless particle needs a positive speed")
        lam_th = np.pi ** (2.0 / 3.0) * HBAR_SI * speed / kt
    else:
        raise ValueError("particle must be 'massive' or 'massless'")
    return float(lam_th), float(HBAR_SI / kt)


def write_snapshot_csv(path, times: Iterable[float], states: Sequence[HybridDensityMatrix]) -> None:
    """Rows keyed by time: t, rho_gg, interference norm, conduction density at each x."""
    states = list(states)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t", "rho_gg", "rho_int_norm"] + [f"n(x={x:.6g})" for x in states[0].grid.x]
        writer.writerow(header)
        for t, s in zip(times, states):
            writer.writerow(
                [f"{t:.9g}", f"{s.rho_gg:.12g}", f"{s.interference_norm():.12g}"]
                + [f"{d:.12g}" for d in s.diag_density()]
            )
