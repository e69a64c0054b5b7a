"""Two-slit experiment over an array of photodiodes.

M detectors tile the screen; the photon couples to each with strength
proportional to the local far-field amplitude A(x_n).  Each photon run
evolves the absorption amplitudes over the interaction window and then a
collapse trajectory over the M+1 blocks (bound plus one conduction block
per detector).  The trajectory traps in one block; clicks land on detector
n with conditional probability |A(x_n)|^2 / sum|A|^2.

The first jump decides the trapped block exactly: every jump operator maps
block n to itself and annihilates the others along with the bound level, so
the post-jump dynamics can never leave the block.  Photon outcomes are
therefore sampled from the first-jump decomposition of the race, whose
survival curve and per-channel intensities are computed once per experiment
by propagating the exact no-jump drift of the full M+1-block state.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.stats import chisquare

from .absorption import AmplitudeState, CouplingModel, evolve_detector_array
from .bath import BathSpec
from .constants import HBAR
from .numerics import RngStream, rng_split
from .unravel import CollapseScenario, HybridWavefunction, run_jump_ensemble, run_diffusive_ensemble

__all__ = [
    "UNRESOLVED",
    "NO_CLICK",
    "SlitGeometry",
    "DetectorArray",
    "ClickHistogram",
    "CollapseRace",
    "slit_amplitude",
    "build_race",
    "simulate_photon",
    "run_experiment",
    "write_histogram_csv",
]

NO_CLICK = 0
UNRESOLVED = -1


@dataclass(frozen=True)
class SlitGeometry:
    """Double-slit parameters; everything in one length unit."""

    slit_separation: float
    slit_width: float
    screen_distance: float
    wavelength: float

    def __post_init__(self):
        for name in ("slit_separation", "slit_width", "screen_distance", "wavelength"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.screen_distance < 10.0 * self.slit_separation:
            warnings.warn("far-field condition L >> d is marginal", stacklevel=2)

    @property
    def fringe_spacing(self) -> float:
        return self.wavelength * self.screen_distance / self.slit_separation


def slit_amplitude(geom: SlitGeometry, x) -> np.ndarray:
    """Fraunhofer two-slit amplitude cos(pi d x / (lam L)) * sinc(pi a x / (lam L)).

    Unnormalized; even in x, first interference null at x = lam L / (2 d).
    """
    x = np.asarray(x, dtype=float)
    u = x / (geom.wavelength * geom.screen_distance)
    return np.cos(np.pi * geom.slit_separation * u) * np.sinc(geom.slit_width * u)


@dataclass(frozen=True)
class DetectorArray:
    """Screen pixel positions and the normalized photon amplitude at each."""

    positions: np.ndarray
    pixel_width: float
    amplitudes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float))
        amps = np.asarray(self.amplitudes, dtype=complex)
        norm = np.sqrt(np.sum(np.abs(amps) ** 2))
        if norm == 0:
            raise ValueError("all detector amplitudes are zero")
        object.__setattr__(self, "amplitudes", amps / norm)

    @classmethod
    def from_geometry(
        cls, geom: SlitGeometry, n_detectors: int, span: float, offset: float = 0.0
    ) -> "DetectorArray":
        """n pixels of equal width covering [offset - span/2, offset + span/2]."""
        width = span / n_detectors
        centers = offset + (np.arange(n_detectors) - (n_detectors - 1) / 2.0) * width
        return cls(centers, width, slit_amplitude(geom, centers))

    @classmethod
    def from_amplitudes(cls, positions, amplitudes, pixel_width: float = 1.0) -> "DetectorArray":
        return cls(np.asarray(positions, dtype=float), pixel_width, amplitudes)

    @property
    def n_detectors(self) -> int:
        return len(self.positions)

    def intensities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass
class ClickHistogram:
    counts: np.ndarray
    no_click_count: int
    unresolved_count: int
    total_photons: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=int)
        if self.counts.sum() + self.no_click_count + self.unresolved_count != self.total_photons:
            raise ValueError("histogram does not account for every photon")

    @property
    def click_count(self) -> int:
        return int(self.counts.sum())

    def conditional_frequencies(self) -> np.ndarray:
        n = self.click_count
        return self.counts / n if n > 0 else self.counts.astype(float)

    def goodness_of_fit(self, intensities: np.ndarray):
        """Chi-square of the conditional click histogram against |A_n|^2."""
        p = np.asarray(intensities, dtype=float)
        p = p / p.sum()
        expected = p * self.click_count
        stat, pval = chisquare(self.counts, expected)
        return float(stat), float(pval)


@dataclass(frozen=True)
class CollapseRace:
    """First-jump decomposition of the no-jump drift over the race horizon.

    survival[k] is the exact probability that no jump occurred through step
    k; channel_cdf[k] the cumulative channel distribution conditional on a
    first jump in step k.
    """

    survival: np.ndarray  # (n_steps + 1,), decreasing, survival[0] = 1
    channel_cdf: np.ndarray  # (n_steps, M)
    dt: float
    alpha: complex
    betas: np.ndarray
    bound_fraction_end: float
    resolved_no_click: bool
    horizon: float
    decoherence_time_diag: float


def build_race(
    array: DetectorArray,
    bath: BathSpec,
    scenario: Optional[CollapseScenario] = None,
    g_scale: complex = 1.0,
    tau: float = 1.0,
    threshold: float = 0.999,
) -> CollapseRace:
    """Absorption stage plus the deterministic part of the collapse race."""
    scenario = scenario or CollapseScenario(bath=bath, threshold=threshold)
    coupling = CouplingModel.detector_array(array.amplitudes, g_scale, tau)
    amp0 = AmplitudeState.initial(array.n_detectors)
    amp = evolve_detector_array(amp0, coupling, tau)

    ops = scenario.operators()
    psi = scenario.initial_state(amp.alpha, amp.betas)
    horizon, dt, t_dec = scenario.horizon_and_dt(psi, ops)
    n_steps = max(1, int(round(horizon / dt)))
    u_prop = expm((-1j * dt / HBAR) * ops.h_eff())
    m_mat = ops.a_dag_a

    c = psi.c_g
    blocks = psi.blocks.copy()
    survival = np.empty(n_steps + 1)
    survival[0] = 1.0
    channel_cdf = np.empty((n_steps, array.n_detectors))
    for k in range(n_steps):
        w = np.array([float(np.vdot(b, m_mat @ b).real) for b in blocks])
        total = w.sum()
        channel_cdf[k] = np.cumsum(w) / total if total > 0 else np.linspace(0, 1, len(w))
        blocks = blocks @ u_prop.T
        survival[k + 1] = abs(c) ** 2 + float(np.sum(np.abs(blocks) ** 2))

    bound_fraction = abs(c) ** 2 / survival[-1] if survival[-1] > 0 else 1.0
    return CollapseRace(
        survival=survival,
        channel_cdf=channel_cdf,
        dt=dt,
        alpha=amp.alpha,
        betas=amp.betas,
        bound_fraction_end=bound_fraction,
        resolved_no_click=bound_fraction >= scenario.threshold,
        horizon=horizon,
        decoherence_time_diag=t_dec,
    )


def _sample_outcome(race: CollapseRace, rng: RngStream) -> int:
    u1, u2 = rng.uniform(2)
    if u1 < race.survival[-1]:
        return NO_CLICK if race.resolved_no_click else UNRESOLVED
    # survival is decreasing; first jump in step k iff survival[k+1] < u1 <= survival[k]
    rev = race.survival[::-1]
    k = len(race.survival) - 1 - int(np.searchsorted(rev, u1, side="left"))
    k = min(max(k, 0), race.channel_cdf.shape[0] - 1)
    ch = int(np.searchsorted(race.channel_cdf[k], u2, side="right"))
    ch = min(ch, race.channel_cdf.shape[1] - 1)
    return ch + 1


def simulate_photon(
    geom_or_array,
    bath: BathSpec,
    rng: RngStream,
    scenario: Optional[CollapseScenario] = None,
    g_scale: complex = 1.0,
    tau: float = 1.0,
    n_detectors: int = 16,
    span: Optional[float] = None,
    race: Optional[CollapseRace] = None,
) -> int:
    """Single-photon outcome: detector index (1-based), NO_CLICK, or UNRESOLVED."""
    if race is None:
        if isinstance(geom_or_array, SlitGeometry):
            span = span if span is not None else 3.0 * geom_or_array.fringe_spacing
            array = DetectorArray.from_geometry(geom_or_array, n_detectors, span)
        else:
            array = geom_or_array
        race = build_race(array, bath, scenario=scenario, g_scale=g_scale, tau=tau)
    return _sample_outcome(race, rng)


def run_experiment(
    geom: Optional[SlitGeometry],
    array: DetectorArray,
    n_photons: int,
    bath: BathSpec,
    master_seed: int,
    scenario: Optional[CollapseScenario] = None,
    g_scale: complex = 1.0,
    tau: float = 1.0,
    cross_check_diffusive: int = 0,
) -> tuple:
    """Send n_photons independent photons; photon i consumes stream (seed, i).

    Returns (ClickHistogram, CollapseRace).  When cross_check_diffusive > 0,
    that many full diffusive trajectories of the same race state are run and
    their click fraction is compared against the jump result (3-sigma
    warning on disagreement).
    """
    if n_photons < 1:
        raise ValueError("n_photons must be >= 1")
    race = build_race(array, bath, scenario=scenario, g_scale=g_scale, tau=tau)
    counts = np.zeros(array.n_detectors, dtype=int)
    no_click = 0
    unresolved = 0
    for i in range(n_photons):
        outcome = _sample_outcome(race, rng_split(master_seed, i))
        if outcome == NO_CLICK:
            no_click += 1
        elif outcome == UNRESOLVED:
            unresolved += 1
        else:
            counts[outcome - 1] += 1
    hist = ClickHistogram(counts, no_click, unresolved, n_photons)

    if cross_check_diffusive > 0:
        _cross_check(race, array, bath, scenario, master_seed, hist, cross_check_diffusive)
    return hist, race


def _cross_check(race, array, bath, scenario, master_seed, hist, n_check):
    scenario = scenario or CollapseScenario(bath=bath)
    ops = scenario.operators()
    psi = scenario.initial_state(race.alpha, race.betas)
    dt = min(race.dt, 0.02 * race.decoherence_time_diag)
    trajs = run_diffusive_ensemble(
        psi, ops, race.horizon, dt, master_seed + 1, n_check, threshold=scenario.threshold
    )
    clicked = sum(1 for tr in trajs if tr.resolved and tr.final_block != 0)
    p_jump = hist.click_count / hist.total_photons
    p_diff = clicked / n_check
    sigma = np.sqrt(p_jump * (1 - p_jump) / hist.total_photons + p_diff * (1 - p_diff) / n_check)
    if sigma > 0 and abs(p_jump - p_diff) > 3.0 * sigma:
        warnings.warn(
            f"diffusive cross-check disagrees: jump {p_jump:.4f} vs diffusive {p_diff:.4f}",
            stacklevel=2,
        )


def write_histogram_csv(path, array: DetectorArray, hist: ClickHistogram) -> None:
    """Columns: x_n, |A_n|^2, expected_count (conditioned on clicks), observed_count."""
    inten = array.intensities()
    p = inten / inten.sum()
    expected = p * hist.click_count
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_n", "intensity", "expected_count", "observed_count"])
        for xn, i_n, e_n, o_n in zip(array.positions, inten, expected, hist.counts):
            writer.writerow([f"{xn:.9g}", f"{i_n:.9g}", f"{e_n:.6f}", int(o_n)])
