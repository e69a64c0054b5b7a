"""End-to-end measurement chain and its configuration.

Stages run in order: absorption -> localization/collapse -> conduction ->
avalanche -> pointer -> reset ledger.  A no-click outcome short-circuits
conduction, avalanche, and deflection but still produces a full report.
Configuration lives in one INI file (sections below); command-line flags
override file values.  Reports are JSON with a schema version, the config
hash, and the master seed embedded, so a run can be reproduced exactly.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import avalanche as av
from . import pointer as pt
from . import transport as tr
from .absorption import AmplitudeState, CouplingModel, evolve_equivalent_electrons
from .bath import BathSpec
from .constants import E_CHARGE, K_B_SI, LN2
from .numerics import rng_split
from .unravel import (
    CollapseScenario,
    run_jump_ensemble,
    run_trajectory_diffusive,
    run_trajectory_jump,
    write_trajectory_csv,
)

__all__ = ["ConfigError", "PipelineConfig", "PipelineReport", "run_pipeline", "landauer_bound"]

SCHEMA_VERSION = "1"


class ConfigError(ValueError):
    """Malformed, unknown, or out-of-range configuration."""


# section -> key -> (type, default)
_SCHEMA = {
    "bath": {
        "temperature": (float, 1.0),
        "gamma": (float, 1.0),
        "mass": (float, 0.25),
        "grid_points": (int, 64),
        "extent_lambda": (float, 16.0),
    },
    "absorption": {
        "coupling": (float, 0.7853981633974483),  # |g~| tau = pi/4: click prob 1/2
        "interaction_time": (float, 1.0),
        "n_electrons": (int, 1),
        "photon_frequency": (float, 1.0),
        "level_energy_ground": (float, 0.0),
        "level_energy_excited": (float, 1.0),
    },
    "unraveling": {
        "scheme": (str, "jump"),
        "dt": (float, 0.0),  # 0 -> automatic step policy
        "n_traj": (int, 1000),
        "master_seed": (int, 42),
        "packet_momentum_lambda": (float, 0.5),
        "packet_center_lambda": (float, 0.0),
        "packet_width_lambda": (float, 1.0),
        "horizon_decoherence": (float, 10.0),
        "threshold": (float, 0.999),
    },
    "transport": {
        "relax_time": (float, 1.0),
        "field": (float, 0.01),
        "mass": (float, 1.0),
        "temperature": (float, 0.5),
        "chemical_potential": (float, -1.0),
        "k_max": (float, 6.0),
        "k_points": (int, 512),
        "dt": (float, 0.05),
        "w0": (float, 0.02),
        "sound_speed": (float, 1.0),
    },
    "avalanche": {
        "drift_speed": (float, 1.0),
        "alpha_rate": (float, 2.0),
        "bound_density": (float, 1.0),
        "grid_points": (int, 400),
        "length": (float, 1.0),
        "seed_width": (float, 0.02),
        "seed_center": (float, 0.1),
        "cfl": (float, 0.8),
    },
    "pointer": {
        "inertia": (float, 1.0),
        "n_turns": (int, 50),
        "coil_area": (float, 0.01),
        "b_field": (float, 1.0),
        "damping": (float, 1.4),
        "spring_constant": (float, 1.0),
        "current_scale": (float, 0.05),
    },
    "reporting": {
        "temperature_kelvin": (float, 300.0),
        "n_bits": (float, 0.0),  # 0 -> automatic: 1 bit, plus log2(M) in array mode
        "overhead_factor": (float, 1.0),
        "out_dir": (str, ""),
        "dump_trajectories": (bool, False),
        "dump_avalanche": (bool, False),
        "dump_snapshots": (bool, False),
    },
    "twoslit": {
        "slit_separation": (float, 10.0),
        "slit_width": (float, 3.0),
        "screen_distance": (float, 5000.0),
        "wavelength": (float, 1.0),
        "n_detectors": (int, 16),
        "span": (float, 0.0),  # 0 -> three fringe spacings
        "n_photons": (int, 100000),
        "g_scale": (float, 0.7853981633974483),
        "tau": (float, 1.0),
    },
}

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _convert(section: str, key: str, raw: str, typ):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from exc


@dataclass
class PipelineConfig:
    """Validated configuration; every section checked before any computation."""

    values: dict = field(default_factory=dict)

    @classmethod
    def defaults(cls) -> "PipelineConfig":
        return cls({s: {k: d for k, (_t, d) in keys.items()} for s, keys in _SCHEMA.items()})

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        cfg = cls.defaults()
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                typ = _SCHEMA[section][key][0]
                cfg.values[section][key] = _convert(section, key, raw, typ)
        cfg.validate()
        return cfg

    def override(self, dotted_key: str, raw: str) -> None:
        """Apply a 'section.key=value' command-line override."""
        if "." not in dotted_key:
            raise ConfigError(f"override must look like section.key, got {dotted_key!r}")
        section, key = dotted_key.split(".", 1)
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown config entry {section}.{key}")
        self.values[section][key] = _convert(section, key, raw, _SCHEMA[section][key][0])

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def validate(self) -> None:
        v = self.values
        if v["bath"]["temperature"] <= 0 or v["bath"]["mass"] <= 0:
            raise ConfigError("bath temperature and mass must be positive")
        if v["bath"]["gamma"] < 0:
            raise ConfigError("bath gamma must be non-negative")
        if v["unraveling"]["scheme"] not in ("jump", "diffusive"):
            raise ConfigError("unraveling scheme must be 'jump' or 'diffusive'")
        if not 0.5 < v["unraveling"]["threshold"] < 1.0:
            raise ConfigError("unraveling threshold must lie in (0.5, 1)")
        if v["reporting"]["overhead_factor"] < 1.0:
            raise ConfigError("reporting overhead_factor must be >= 1 (Landauer bound)")
        if v["unraveling"]["n_traj"] < 1 or v["twoslit"]["n_photons"] < 1:
            raise ConfigError("n_traj and n_photons must be >= 1")
        if v["pointer"]["current_scale"] <= 0:
            raise ConfigError("pointer current_scale must be positive")

    def hash(self) -> str:
        canon = json.dumps(self.values, sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def bath_spec(self) -> BathSpec:
        b = self.values["bath"]
        return BathSpec(b["temperature"], b["gamma"], b["mass"])

    def scenario(self) -> CollapseScenario:
        b, u = self.values["bath"], self.values["unraveling"]
        return CollapseScenario(
            bath=self.bath_spec(),
            n_grid=b["grid_points"],
            extent_lambda=b["extent_lambda"],
            packet_momentum_lambda=u["packet_momentum_lambda"],
            packet_center_lambda=u["packet_center_lambda"],
            packet_width_lambda=u["packet_width_lambda"],
            dt=u["dt"] if u["dt"] > 0 else None,
            horizon_decoherence=u["horizon_decoherence"],
            threshold=u["threshold"],
        )

    def out_dir(self) -> Path:
        configured = self.values["reporting"]["out_dir"]
        if configured:
            return Path(configured)
        return Path(os.environ.get("DETCHAIN_OUT_DIR", "."))


def landauer_bound(n_bits: float, temperature_kelvin: float) -> float:
    """Minimum reset energy n_bits * k_B T ln 2 in joules."""
    return n_bits * K_B_SI * temperature_kelvin * LN2


@dataclass
class PipelineReport:
    schema_version: str
    config_hash: str
    master_seed: int
    outcome: str  # click | no_click | unresolved
    block_index: Optional[int]
    click_probability: float
    decoherence_time: float
    collapse: dict
    transport: Optional[dict]
    avalanche: Optional[dict]
    pointer: dict
    reset: dict
    timings: dict

    def __post_init__(self):
        bound = self.reset["landauer_bound_joules"]
        if self.reset["energy_joules"] < bound:
            raise ValueError("reset energy below the Landauer bound")

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "outcome": self.outcome,
            "block_index": self.block_index,
            "click_probability": self.click_probability,
            "decoherence_time": self.decoherence_time,
            "collapse": self.collapse,
            "transport": self.transport,
            "avalanche": self.avalanche,
            "pointer": self.pointer,
            "reset": self.reset,
            "timings": self.timings,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


class _StageClock:
    def __init__(self):
        self.timings = {}

    def __call__(self, name):
        clock = self

        class _Ctx:
            def __enter__(self_inner):
                self_inner.t0 = time.perf_counter()

            def __exit__(self_inner, *exc):
                clock.timings[name] = time.perf_counter() - self_inner.t0
                return False

        return _Ctx()


def _run_transport_stage(cfg: PipelineConfig) -> dict:
    c = cfg["transport"]
    k = np.linspace(-c["k_max"], c["k_max"], c["k_points"])
    f_eq = tr.DistributionFunction.equilibrium(
        k, c["mass"], c["temperature"], c["chemical_potential"]
    )
    steady = tr.relax_to_steady_state(
        tr.DistributionFunction(f_eq.f.copy(), k, c["mass"]),
        c["field"], c["relax_time"], c["dt"], f_eq.f,
    )
    sigma_drude = tr.drude_conductivity(f_eq.density(), c["relax_time"], c["mass"])
    return {
        "density": f_eq.density(),
        "drift_velocity": steady.drift_velocity(),
        "current": steady.current(),
        "conductivity": steady.current() / c["field"],
        "conductivity_drude": sigma_drude,
        "delivered_charge": E_CHARGE,  # the collapse outcome frees exactly one electron
    }


def _run_avalanche_stage(cfg: PipelineConfig, seed_charge: float):
    c = cfg["avalanche"]
    state = av.AvalancheState.seeded(
        n_cells=c["grid_points"],
        length=c["length"],
        v=c["drift_speed"],
        alpha_rate=c["alpha_rate"],
        bound_density=c["bound_density"],
        seed_charge=seed_charge,
        seed_center=c["seed_center"],
        seed_width=c["seed_width"],
    )
    dt = c["cfl"] * state.dz / c["drift_speed"]
    record_every = 20 if cfg["reporting"]["dump_avalanche"] else 0
    final, waveform, snapshots = av.run_to_quiescence(state, dt=dt, record_every=record_every)
    report = {
        "gain": av.gain(final),
        "exited_charge": final.exited_charge,
        "consumed_bound_charge": final.consumed_bound,
        "conservation_residual": final.conservation_residual(),
        "clamp_events": final.clamp_events,
        "pulse_duration": float(waveform[-1, 0]),
    }
    return report, waveform, snapshots, final


def _run_pointer_stage(cfg: PipelineConfig, current: float) -> dict:
    c = cfg["pointer"]
    params = pt.PointerParams(
        c["inertia"], c["n_turns"], c["coil_area"], c["b_field"],
        c["damping"], c["spring_constant"],
    )
    theta = pt.settled_angle(params, current)
    return {
        "readout_current": current,
        "drive_ratio": params.drive(current) / c["spring_constant"],
        "settled_angle": theta,
        "deflection_visible": bool(theta > 1e-3),
    }


def run_pipeline(cfg: PipelineConfig) -> PipelineReport:
    """Execute the full chain for a single photon event."""
    cfg.validate()
    clock = _StageClock()
    rep_cfg = cfg["reporting"]
    out_dir = cfg.out_dir()

    with clock("absorption"):
        a = cfg["absorption"]
        coupling = CouplingModel.equivalent_electrons(
            a["coupling"], a["n_electrons"], a["interaction_time"],
            photon_frequency=a["photon_frequency"],
            level_energy_ground=a["level_energy_ground"],
            level_energy_excited=a["level_energy_excited"],
        )
        amp = evolve_equivalent_electrons(AmplitudeState.initial(), coupling, a["interaction_time"])
        click_probability = float(np.sum(np.abs(amp.betas) ** 2))

    with clock("collapse"):
        u = cfg["unraveling"]
        scenario = cfg.scenario()
        ops = scenario.operators()
        psi0 = scenario.initial_state(amp.alpha, amp.betas)
        horizon, dt, t_dec = scenario.horizon_and_dt(psi0, ops)
        stream = rng_split(u["master_seed"], 0)
        runner = run_trajectory_jump if u["scheme"] == "jump" else run_trajectory_diffusive
        traj = runner(psi0, ops, horizon, dt, stream, threshold=u["threshold"])
        if rep_cfg["dump_trajectories"]:
            out_dir.mkdir(parents=True, exist_ok=True)
            write_trajectory_csv(out_dir / "trajectory_0000.csv", traj)
        collapse_report = {
            "final_populations": [float(p) for p in traj.final_state.populations()],
            "resolved": traj.resolved,
            "final_block": traj.final_block,
            "horizon": horizon,
            "dt": dt,
        }
        if not traj.resolved:
            outcome, block = "unresolved", None
        elif traj.final_block == 0:
            outcome, block = "no_click", 0
        else:
            outcome, block = "click", traj.final_block

    transport_report = None
    avalanche_report = None
    pointer_current = 0.0
    if outcome == "click":
        with clock("conduction"):
            transport_report = _run_transport_stage(cfg)
        with clock("avalanche"):
            avalanche_report, waveform, snapshots, final_state = _run_avalanche_stage(
                cfg, transport_report["delivered_charge"]
            )
            if rep_cfg["dump_avalanche"]:
                out_dir.mkdir(parents=True, exist_ok=True)
                av.write_field_csv(out_dir / "avalanche_fields.csv", final_state.z, snapshots)
        # Sustained readout current: amplified charge per pulse duration, scaled.
        pointer_current = (
            avalanche_report["gain"] * E_CHARGE * cfg["pointer"]["current_scale"]
        )

    with clock("pointer"):
        pointer_report = _run_pointer_stage(cfg, pointer_current)

    with clock("reset"):
        n_bits = rep_cfg["n_bits"]
        if n_bits <= 0:
            n_bits = 1.0  # one click/no-click bit re-armed per event
        bound = landauer_bound(n_bits, rep_cfg["temperature_kelvin"])
        reset_report = {
            "n_bits": n_bits,
            "temperature_kelvin": rep_cfg["temperature_kelvin"],
            "landauer_bound_joules": bound,
            "energy_joules": bound * rep_cfg["overhead_factor"],
        }

    return PipelineReport(
        schema_version=SCHEMA_VERSION,
        config_hash=cfg.hash(),
        master_seed=cfg["unraveling"]["master_seed"],
        outcome=outcome,
        block_index=block,
        click_probability=click_probability,
        decoherence_time=t_dec,
        collapse=collapse_report,
        transport=transport_report,
        avalanche=avalanche_report,
        pointer=pointer_report,
        reset=reset_report,
        timings=clock.timings,
    )
