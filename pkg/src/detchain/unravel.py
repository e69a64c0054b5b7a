"""Stochastic unraveling of the bath master equation into single-run trajectories.

Two standard schemes are provided over the hybrid space (one bound dark
level plus one or more conduction-band blocks, one per detector):

Jump (Monte-Carlo wave function): deterministic non-Hermitian drift under
H_eff = H - i hbar gamma/2 A†A, applied with its exact step propagator
exp(-i H_eff dt / hbar), interrupted by jumps psi -> A_n psi / |A_n psi|.
With the exact propagator the no-jump survival probability telescopes to
the exact value, so block statistics carry no step-size bias.

Diffusive (quantum state diffusion): Euler-Maruyama steps with complex
Wiener noise per channel, renormalized each step.

Both consume a fixed number of random draws per step from a counter-based
stream, so trajectory i is identical whether run alone or inside a
vectorized ensemble, at any degree of parallelism.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .bath import (
    BathSpec,
    DissipativeOps,
    HybridDensityMatrix,
    SpatialGrid,
    collapse_operators,
    gaussian_packet,
    make_grid,
    packet_centroid,
    packet_width,
)
from .constants import HBAR
from .numerics import RngStream, rng_split

__all__ = [
    "HybridWavefunction",
    "Trajectory",
    "EnsembleStats",
    "CollapseScenario",
    "run_trajectory_jump",
    "run_trajectory_diffusive",
    "run_jump_ensemble",
    "run_diffusive_ensemble",
    "ensemble_average",
    "write_trajectory_csv",
]

_JUMP_PRE_LIMIT = 0.1
_DRAW_CHUNK = 200


@dataclass
class HybridWavefunction:
    """Normalized pure state: bound amplitude + one grid block per detector."""

    c_g: complex
    blocks: np.ndarray  # (n_blocks, n_grid)
    grid: SpatialGrid

    def __post_init__(self):
        self.blocks = np.atleast_2d(np.asarray(self.blocks, dtype=complex))

    @classmethod
    def superposition(
        cls, alpha: complex, betas, packet: np.ndarray, grid: SpatialGrid
    ) -> "HybridWavefunction":
        """alpha |g> + sum_n beta_n |packet in block n>, renormalized."""
        betas = np.atleast_1d(np.asarray(betas, dtype=complex))
        blocks = betas[:, None] * packet[None, :]
        psi = cls(alpha, blocks, grid)
        return psi.normalized()

    def norm_sq(self) -> float:
        return abs(self.c_g) ** 2 + float(np.sum(np.abs(self.blocks) ** 2))

    def normalized(self) -> "HybridWavefunction":
        s = np.sqrt(self.norm_sq())
        return HybridWavefunction(self.c_g / s, self.blocks / s, self.grid)

    def populations(self) -> np.ndarray:
        """[bound, block_1, ..., block_B] populations."""
        return np.concatenate(
            [[abs(self.c_g) ** 2], np.sum(np.abs(self.blocks) ** 2, axis=1)]
        )

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        h.update(np.asarray([self.c_g]).tobytes())
        h.update(np.ascontiguousarray(self.blocks).tobytes())
        return h.hexdigest()


@dataclass
class Trajectory:
    """One stochastic history with its block-occupancy record."""

    times: np.ndarray
    populations: np.ndarray  # (n_records, 1 + n_blocks)
    centroid: np.ndarray
    width: np.ndarray
    final_state: HybridWavefunction
    final_block: Optional[int]  # 0 = bound, n = detector block n; None if unresolved
    resolved: bool
    stream: tuple  # (master_seed, stream_index)
    meta: dict

    def block_record(self) -> np.ndarray:
        return self.populations


@dataclass
class EnsembleStats:
    n_traj: int
    block_frequencies: np.ndarray  # over resolved trajectories; sums to 1
    unresolved_fraction: float
    mean_matrix: np.ndarray  # full (1 + B*N) matrix, bound level first
    mean_density_matrix: Optional[HybridDensityMatrix]  # populated when B == 1


def _validate_dt(initial: HybridWavefunction, ops: DissipativeOps, dt: float) -> None:
    if dt <= 0:
        raise ValueError("dt must be positive")
    m = ops.a_dag_a
    expect = sum(
        float(np.vdot(b, m @ b).real) for b in initial.blocks
    ) / initial.norm_sq()
    if dt * ops.gamma * expect >= _JUMP_PRE_LIMIT:
        raise ValueError(
            f"dt too large: dt*gamma*<A†A> = {dt * ops.gamma * expect:.3g} >= {_JUMP_PRE_LIMIT}"
        )


def _record_layout(n_steps: int, record_every: Optional[int]):
    if record_every is None:
        record_every = max(1, n_steps // 200)
    idx = list(range(0, n_steps + 1, record_every))
    if idx[-1] != n_steps:
        idx.append(n_steps)
    return record_every, np.asarray(idx)


def _aggregate_profile(blocks: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(blocks) ** 2, axis=0)


def _classify(populations: np.ndarray, threshold: float):
    b = int(np.argmax(populations))
    if populations[b] >= threshold:
        return b, True
    return None, False


def _finish(
    times, pops, cents, widths, c, blocks, grid, threshold, stream, meta
) -> Trajectory:
    state = HybridWavefunction(c, blocks, grid)
    final_block, resolved = _classify(state.populations(), threshold)
    return Trajectory(
        times=np.asarray(times),
        populations=np.asarray(pops),
        centroid=np.asarray(cents),
        width=np.asarray(widths),
        final_state=state,
        final_block=final_block,
        resolved=resolved,
        stream=stream,
        meta=meta,
    )


def run_trajectory_jump(
    initial: HybridWavefunction,
    ops: DissipativeOps,
    t: float,
    dt: float,
    rng: RngStream,
    threshold: float = 0.999,
    record_every: Optional[int] = None,
) -> Trajectory:
    """Monte-Carlo wave function trajectory over the horizon [0, t].

    Two uniform draws per step (jump decision, channel selection) keep the
    stream layout fixed regardless of the realized path.
    """
    _validate_dt(initial, ops, dt)
    n_steps = max(1, int(round(t / dt)))
    u_prop = expm((-1j * dt / HBAR) * ops.h_eff())
    a_mat, m_mat, gamma = ops.a, ops.a_dag_a, ops.gamma
    psi = initial.normalized()
    c, blocks = psi.c_g, psi.blocks.copy()
    rec_every, rec_idx = _record_layout(n_steps, record_every)

    times, pops, cents, widths = [], [], [], []

    def record(step):
        times.append(step * dt)
        p = np.concatenate([[abs(c) ** 2], np.sum(np.abs(blocks) ** 2, axis=1)])
        pops.append(p)
        profile = _aggregate_profile(blocks)
        amp = np.sqrt(profile)
        cents.append(packet_centroid(amp, initial.grid))
        widths.append(packet_width(amp, initial.grid))

    record(0)
    for step in range(1, n_steps + 1):
        u1, u2 = rng.uniform(2)
        new_blocks = blocks @ u_prop.T
        surv = abs(c) ** 2 + float(np.sum(np.abs(new_blocks) ** 2))
        p_jump = 1.0 - surv
        if u1 < p_jump:
            w = np.array([float(np.vdot(b, m_mat @ b).real) for b in blocks])
            total = w.sum()
            if total <= 0.0:
                blocks = new_blocks / np.sqrt(surv)
                c = c / np.sqrt(surv)
            else:
                cum = np.cumsum(w) / total
                ch = int(np.searchsorted(cum, u2, side="right"))
                ch = min(ch, len(w) - 1)
                jumped = a_mat @ blocks[ch]
                blocks = np.zeros_like(blocks)
                blocks[ch] = jumped / np.linalg.norm(jumped)
                c = 0.0
        else:
            s = np.sqrt(surv)
            blocks = new_blocks / s
            c = c / s
        if step in rec_idx:
            record(step)

    meta = {
        "scheme": "jump",
        "t": t,
        "dt": dt,
        "threshold": threshold,
        "initial": initial.normalized().fingerprint(),
    }
    return _finish(
        times, pops, cents, widths, c, blocks, initial.grid, threshold,
        (rng.master_seed, rng.stream_index), meta,
    )


def run_trajectory_diffusive(
    initial: HybridWavefunction,
    ops: DissipativeOps,
    t: float,
    dt: float,
    rng: RngStream,
    threshold: float = 0.999,
    record_every: Optional[int] = None,
) -> Trajectory:
    """Quantum-state-diffusion trajectory, Euler-Maruyama with per-step renormalization.

    Each step consumes 2 standard normals per channel (one complex Wiener
    increment per jump operator).
    """
    _validate_dt(initial, ops, dt)
    n_steps = max(1, int(round(t / dt)))
    a_mat, m_mat, gamma, h = ops.a, ops.a_dag_a, ops.gamma, ops.h
    psi = initial.normalized()
    c, blocks = psi.c_g, psi.blocks.copy()
    n_blocks = blocks.shape[0]
    rec_every, rec_idx = _record_layout(n_steps, record_every)
    sq = np.sqrt(dt / 2.0)

    times, pops, cents, widths = [], [], [], []

    def record(step):
        times.append(step * dt)
        pops.append(np.concatenate([[abs(c) ** 2], np.sum(np.abs(blocks) ** 2, axis=1)]))
        amp = np.sqrt(_aggregate_profile(blocks))
        cents.append(packet_centroid(amp, initial.grid))
        widths.append(packet_width(amp, initial.grid))

    record(0)
    for step in range(1, n_steps + 1):
        z = rng.standard_normal((n_blocks, 2))
        dxi = sq * (z[:, 0] + 1j * z[:, 1])
        a_blocks = blocks @ a_mat.T
        expect_a = np.array([np.vdot(blocks[b], a_blocks[b]) for b in range(n_blocks)])
        drift_blocks = (-1j / HBAR) * (blocks @ h.T)
        drift_blocks += gamma * (
            expect_a.conj()[:, None] * a_blocks
            - 0.5 * (blocks @ m_mat.T)
            - 0.5 * (np.abs(expect_a) ** 2)[:, None] * blocks
        )
        drift_c = -0.5 * gamma * float(np.sum(np.abs(expect_a) ** 2)) * c
        noise_blocks = np.sqrt(gamma) * (
            dxi[:, None] * a_blocks - (dxi * expect_a)[:, None] * blocks
        )
        noise_c = -np.sqrt(gamma) * np.sum(dxi * expect_a) * c
        c = c + dt * drift_c + noise_c
        blocks = blocks + dt * drift_blocks + noise_blocks
        norm = np.sqrt(abs(c) ** 2 + np.sum(np.abs(blocks) ** 2))
        c /= norm
        blocks /= norm
        if step in rec_idx:
            record(step)

    meta = {
        "scheme": "diffusive",
        "t": t,
        "dt": dt,
        "threshold": threshold,
        "initial": initial.normalized().fingerprint(),
    }
    return _finish(
        times, pops, cents, widths, c, blocks, initial.grid, threshold,
        (rng.master_seed, rng.stream_index), meta,
    )


def _chunked_uniforms(master_seed: int, n_traj: int, n_steps: int):
    """Yield (start_step, uniforms[traj, step_in_chunk, 2]) chunks, stream i -> row i."""
    gens = [rng_split(master_seed, i).generator for i in range(n_traj)]
    start = 0
    while start < n_steps:
        size = min(_DRAW_CHUNK, n_steps - start)
        block = np.empty((n_traj, size, 2))
        for i, g in enumerate(gens):
            block[i] = g.random((size, 2))
        yield start, block
        start += size


def run_jump_ensemble(
    initial: HybridWavefunction,
    ops: DissipativeOps,
    t: float,
    dt: float,
    master_seed: int,
    n_traj: int,
    threshold: float = 0.999,
    record_every: Optional[int] = None,
) -> List[Trajectory]:
    """Vectorized jump ensemble; trajectory i consumes stream (master_seed, i).

    Draw-for-draw identical to running run_trajectory_jump on each stream,
    so results are independent of batch size or parallel schedule.
    """
    _validate_dt(initial, ops, dt)
    n_steps = max(1, int(round(t / dt)))
    u_prop = expm((-1j * dt / HBAR) * ops.h_eff())
    a_mat, m_mat, gamma = ops.a, ops.a_dag_a, ops.gamma
    psi0 = initial.normalized()
    n_blocks, n_grid = psi0.blocks.shape
    rec_every, rec_idx = _record_layout(n_steps, record_every)
    rec_set = set(int(i) for i in rec_idx)

    c = np.full(n_traj, psi0.c_g, dtype=complex)
    blocks = np.broadcast_to(psi0.blocks, (n_traj, n_blocks, n_grid)).copy()

    rec_times, rec_pops, rec_cent, rec_wid = [], [], [], []
    x = psi0.grid.x

    def record(step):
        rec_times.append(step * dt)
        p = np.empty((n_traj, 1 + n_blocks))
        p[:, 0] = np.abs(c) ** 2
        p[:, 1:] = np.sum(np.abs(blocks) ** 2, axis=2)
        rec_pops.append(p)
        prof = np.sum(np.abs(blocks) ** 2, axis=1)  # (n_traj, n_grid)
        w = prof.sum(axis=1)
        w_safe = np.where(w > 0, w, 1.0)
        mean = (prof @ x) / w_safe
        var = (prof @ (x**2)) / w_safe - mean**2
        rec_cent.append(np.where(w > 0, mean, np.nan))
        rec_wid.append(np.where(w > 0, np.sqrt(np.clip(var, 0.0, None)), np.nan))

    record(0)
    step = 0
    for start, draws in _chunked_uniforms(master_seed, n_traj, n_steps):
        for j in range(draws.shape[1]):
            step += 1
            u1 = draws[:, j, 0]
            u2 = draws[:, j, 1]
            flat = blocks.reshape(n_traj * n_blocks, n_grid)
            new_flat = flat @ u_prop.T
            new_blocks = new_flat.reshape(n_traj, n_blocks, n_grid)
            surv = np.abs(c) ** 2 + np.sum(np.abs(new_blocks) ** 2, axis=(1, 2))
            jump_mask = u1 < (1.0 - surv)
            keep = ~jump_mask
            s = np.sqrt(surv[keep])
            c[keep] = c[keep] / s
            new_blocks[keep] /= s[:, None, None]
            blocks_out = new_blocks
            for i in np.nonzero(jump_mask)[0]:
                w = np.array(
                    [float(np.vdot(blocks[i, b], m_mat @ blocks[i, b]).real) for b in range(n_blocks)]
                )
                total = w.sum()
                if total <= 0.0:
                    sv = np.sqrt(surv[i])
                    c[i] = c[i] / sv
                    blocks_out[i] = new_blocks[i] / sv
                    continue
                cum = np.cumsum(w) / total
                ch = min(int(np.searchsorted(cum, u2[i], side="right")), n_blocks - 1)
                jumped = a_mat @ blocks[i, ch]
                blocks_out[i] = 0.0
                blocks_out[i, ch] = jumped / np.linalg.norm(jumped)
                c[i] = 0.0
            blocks = blocks_out
            if step in rec_set:
                record(step)

    return _package_ensemble(
        rec_times, rec_pops, rec_cent, rec_wid, c, blocks, psi0, master_seed, n_traj, threshold,
        {"scheme": "jump", "t": t, "dt": dt, "threshold": threshold, "initial": psi0.fingerprint()},
    )


def run_diffusive_ensemble(
    initial: HybridWavefunction,
    ops: DissipativeOps,
    t: float,
    dt: float,
    master_seed: int,
    n_traj: int,
    threshold: float = 0.999,
    record_every: Optional[int] = None,
) -> List[Trajectory]:
    """Vectorized quantum-state-diffusion ensemble (stream i -> trajectory i)."""
    _validate_dt(initial, ops, dt)
    n_steps = max(1, int(round(t / dt)))
    a_mat, m_mat, gamma, h = ops.a, ops.a_dag_a, ops.gamma, ops.h
    psi0 = initial.normalized()
    n_blocks, n_grid = psi0.blocks.shape
    rec_every, rec_idx = _record_layout(n_steps, record_every)
    rec_set = set(int(i) for i in rec_idx)
    sq = np.sqrt(dt / 2.0)
    sg = np.sqrt(gamma)

    c = np.full(n_traj, psi0.c_g, dtype=complex)
    blocks = np.broadcast_to(psi0.blocks, (n_traj, n_blocks, n_grid)).copy()
    rec_times, rec_pops, rec_cent, rec_wid = [], [], [], []
    x = psi0.grid.x

    def record(step):
        rec_times.append(step * dt)
        p = np.empty((n_traj, 1 + n_blocks))
        p[:, 0] = np.abs(c) ** 2
        p[:, 1:] = np.sum(np.abs(blocks) ** 2, axis=2)
        rec_pops.append(p)
        prof = np.sum(np.abs(blocks) ** 2, axis=1)
        w = prof.sum(axis=1)
        w_safe = np.where(w > 0, w, 1.0)
        mean = (prof @ x) / w_safe
        var = (prof @ (x**2)) / w_safe - mean**2
        rec_cent.append(np.where(w > 0, mean, np.nan))
        rec_wid.append(np.where(w > 0, np.sqrt(np.clip(var, 0.0, None)), np.nan))

    gens = [rng_split(master_seed, i).generator for i in range(n_traj)]
    record(0)
    step = 0
    start = 0
    while start < n_steps:
        size = min(_DRAW_CHUNK, n_steps - start)
        z = np.empty((n_traj, size, n_blocks, 2))
        for i, g in enumerate(gens):
            z[i] = g.standard_normal((size, n_blocks, 2))
        for j in range(size):
            step += 1
            dxi = sq * (z[:, j, :, 0] + 1j * z[:, j, :, 1])  # (n_traj, n_blocks)
            flat = blocks.reshape(n_traj * n_blocks, n_grid)
            a_blocks = (flat @ a_mat.T).reshape(n_traj, n_blocks, n_grid)
            m_blocks = (flat @ m_mat.T).reshape(n_traj, n_blocks, n_grid)
            h_blocks = (flat @ h.T).reshape(n_traj, n_blocks, n_grid)
            expect_a = np.einsum("tbn,tbn->tb", blocks.conj(), a_blocks)
            drift = (-1j / HBAR) * h_blocks + gamma * (
                expect_a.conj()[:, :, None] * a_blocks
                - 0.5 * m_blocks
                - 0.5 * (np.abs(expect_a) ** 2)[:, :, None] * blocks
            )
            drift_c = -0.5 * gamma * np.sum(np.abs(expect_a) ** 2, axis=1) * c
            noise = sg * (dxi[:, :, None] * a_blocks - (dxi * expect_a)[:, :, None] * blocks)
            noise_c = -sg * np.sum(dxi * expect_a, axis=1) * c
            c = c + dt * drift_c + noise_c
            blocks = blocks + dt * drift + noise
            norm = np.sqrt(np.abs(c) ** 2 + np.sum(np.abs(blocks) ** 2, axis=(1, 2)))
            c /= norm
            blocks /= norm[:, None, None]
            if step in rec_set:
                record(step)
        start += size

    return _package_ensemble(
        rec_times, rec_pops, rec_cent, rec_wid, c, blocks, psi0, master_seed, n_traj, threshold,
        {"scheme": "diffusive", "t": t, "dt": dt, "threshold": threshold, "initial": psi0.fingerprint()},
    )


def _package_ensemble(
    rec_times, rec_pops, rec_cent, rec_wid, c, blocks, psi0, master_seed, n_traj, threshold, meta
) -> List[Trajectory]:
    times = np.asarray(rec_times)
    pops = np.stack(rec_pops, axis=1)  # (n_traj, n_rec, 1 + B)
    cents = np.stack(rec_cent, axis=1)
    wids = np.stack(rec_wid, axis=1)
    out = []
    for i in range(n_traj):
        state = HybridWavefunction(c[i], blocks[i], psi0.grid)
        final_block, resolved = _classify(state.populations(), threshold)
        out.append(
            Trajectory(
                times=times,
                populations=pops[i],
                centroid=cents[i],
                width=wids[i],
                final_state=state,
                final_block=final_block,
                resolved=resolved,
                stream=(master_seed, i),
                meta=dict(meta),
            )
        )
    return out


def ensemble_average(trajectories: Sequence[Trajectory]) -> EnsembleStats:
    """Average |psi><psi| over the ensemble and tally block frequencies.

    All trajectories must share the initial state, scheme, horizon, and
    step; mixing ensembles raises ValueError.
    """
    if not trajectories:
        raise ValueError("empty ensemble")
    ref = trajectories[0].meta
    for tr in trajectories[1:]:
        if tr.meta != ref:
            raise ValueError("inhomogeneous ensemble: metadata differs")
    n_blocks = trajectories[0].final_state.n_blocks
    dim = 1 + n_blocks * trajectories[0].final_state.blocks.shape[1]
    acc = np.zeros((dim, dim), dtype=complex)
    counts = np.zeros(1 + n_blocks)
    unresolved = 0
    for tr in trajectories:
        vec = np.concatenate([[tr.final_state.c_g], tr.final_state.blocks.ravel()])
        acc += np.outer(vec, vec.conj())
        if tr.resolved:
            counts[tr.final_block] += 1
        else:
            unresolved += 1
    n = len(trajectories)
    acc /= n
    resolved_total = counts.sum()
    freqs = counts / resolved_total if resolved_total > 0 else counts
    hybrid = None
    if n_blocks == 1:
        grid = trajectories[0].final_state.grid
        hybrid = HybridDensityMatrix(acc[0, 0].real, acc[0, 1:], acc[1:, 1:], grid)
    return EnsembleStats(
        n_traj=n,
        block_frequencies=freqs,
        unresolved_fraction=unresolved / n,
        mean_matrix=acc,
        mean_density_matrix=hybrid,
    )


def write_trajectory_csv(path, trajectory: Trajectory) -> None:
    """Rows: t, block populations..., packet centroid, packet width."""
    import csv as _csv

    n_blocks = trajectory.populations.shape[1] - 1
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(
            ["t", "pop_bound"]
            + [f"pop_block_{b + 1}" for b in range(n_blocks)]
            + ["centroid", "width"]
        )
        for i, t in enumerate(trajectory.times):
            row = [f"{t:.9g}"] + [f"{p:.9g}" for p in trajectory.populations[i]]
            row += [f"{trajectory.centroid[i]:.9g}", f"{trajectory.width[i]:.9g}"]
            writer.writerow(row)


@dataclass(frozen=True)
class CollapseScenario:
    """Shared recipe for collapse runs: bath, grid, packet, and step policy."""

    bath: BathSpec
    n_grid: int = 64
    extent_lambda: float = 16.0
    packet_momentum_lambda: float = 0.5
    packet_center_lambda: float = 0.0
    packet_width_lambda: float = 1.0
    dt: Optional[float] = None
    horizon_decoherence: float = 10.0
    threshold: float = 0.999

    def grid(self) -> SpatialGrid:
        return make_grid(self.bath, self.n_grid, self.extent_lambda)

    def operators(self, include_kinetic: bool = True) -> DissipativeOps:
        return collapse_operators(self.grid(), self.bath, include_kinetic=include_kinetic)

    def packet(self) -> np.ndarray:
        lam = self.bath.lam
        return gaussian_packet(
            self.grid(),
            width=self.packet_width_lambda * lam,
            center=self.packet_center_lambda * lam,
            momentum=self.packet_momentum_lambda / lam,
        )

    def initial_state(self, alpha: complex, betas) -> HybridWavefunction:
        return HybridWavefunction.superposition(alpha, betas, self.packet(), self.grid())

    def horizon_and_dt(self, initial: HybridWavefunction, ops: DissipativeOps):
        """Horizon = configured multiple of the decoherence-time diagnostic 1/(gamma <A†A>)."""
        m = ops.a_dag_a
        expect = sum(float(np.vdot(b, m @ b).real) for b in initial.blocks)
        expect /= initial.norm_sq()
        rate = ops.gamma * expect
        if rate <= 0:
            raise ValueError("initial state is bath-dark; no collapse horizon exists")
        t_dec = 1.0 / rate
        horizon = self.horizon_decoherence * t_dec
        dt = self.dt if self.dt is not None else min(0.05 * t_dec, horizon / 400.0)
        return horizon, dt, t_dec
