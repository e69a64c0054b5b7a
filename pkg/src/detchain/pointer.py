"""Moving-coil ammeter readout.

Equation of motion for the deflection angle:

    J theta'' = N I A B cos(theta) - eta theta' - c theta

For a constant drive the stable rest angle solves c theta = N I A B cos(theta);
the implementation restricts to the single-root regime N I A B / c < pi/2 and
refuses larger drives.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .numerics import integrate_ode

__all__ = ["PointerParams", "PointerState", "PointerTrajectory", "integrate_pointer", "settled_angle", "write_angle_csv"]


@dataclass(frozen=True)
class PointerParams:
    inertia: float
    n_turns: int
    coil_area: float
    b_field: float
    damping: float
    spring_constant: float

    def __post_init__(self):
        if self.inertia <= 0 or self.damping <= 0 or self.spring_constant <= 0:
            raise ValueError("inertia, damping, and spring constant must be positive")

    def drive(self, current: float) -> float:
        """Torque amplitude N I A B."""
        return self.n_turns * current * self.coil_area * self.b_field


@dataclass(frozen=True)
class PointerState:
    theta: float
    theta_dot: float


@dataclass
class PointerTrajectory:
    times: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray

    @property
    def final(self) -> PointerState:
        return PointerState(float(self.theta[-1]), float(self.theta_dot[-1]))

    def mechanical_energy(self, params: PointerParams) -> np.ndarray:
        return 0.5 * params.inertia * self.theta_dot**2 + 0.5 * params.spring_constant * self.theta**2


def integrate_pointer(
    params: PointerParams,
    initial: PointerState,
    t: float,
    tol: float = 1e-10,
    current: Union[float, Callable[[float], float], tuple] = 0.0,
    n_samples: int = 400,
) -> PointerTrajectory:
    """RK45 solution of the pointer equation over [0, t].

    ``current`` may be a constant, a callable I(t), or a (times, values)
    waveform that is resampled piecewise-linearly onto the ODE time base
    (zero outside its support).
    """
    if callable(current):
        i_of_t = current
    elif isinstance(current, tuple):
        wt, wv = np.asarray(current[0], float), np.asarray(current[1], float)

        def i_of_t(time, _wt=wt, _wv=wv):
            return float(np.interp(time, _wt, _wv, left=0.0, right=0.0))

    else:
        i_const = float(current)

        def i_of_t(_time):
            return i_const

    j, eta, c = params.inertia, params.damping, params.spring_constant

    def rhs(time, y):
        theta, omega = y[0].real, y[1].real
        torque = params.drive(i_of_t(time)) * np.cos(theta)
        return np.array([omega, (torque - eta * omega - c * theta) / j], dtype=complex)

    t_eval = np.linspace(0.0, t, n_samples)
    y0 = np.array([initial.theta, initial.theta_dot], dtype=complex)
    ys = integrate_ode(y0, rhs, 0.0, t, tol=tol, t_eval=t_eval)
    return PointerTrajectory(t_eval, ys[:, 0].real.copy(), ys[:, 1].real.copy())


def settled_angle(params: PointerParams, current: float, tol: float = 1e-12) -> float:
    """Bisection root of c theta - N I A B cos(theta) = 0 on [0, pi/2].

    Requires the unique-stable-root regime |N I A B| / c < pi/2.
    """
    kappa = params.drive(current) / params.spring_constant
    if abs(kappa) >= np.pi / 2:
        raise ValueError(
            f"drive out of the single-root regime: N I A B / c = {kappa:.4f} >= pi/2"
        )
    if kappa == 0.0:
        return 0.0
    sign = 1.0 if kappa > 0 else -1.0
    kappa = abs(kappa)

    def g(theta):
        return theta - kappa * np.cos(theta)

    lo, hi = 0.0, np.pi / 2
    # g(0) = -kappa < 0, g(pi/2) = pi/2 > 0, g strictly increasing on the interval
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            break
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    return sign * 0.5 * (lo + hi)


def write_angle_csv(path, traj: PointerTrajectory) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "theta", "theta_dot"])
        for t, th, om in zip(traj.times, traj.theta, traj.theta_dot):
            writer.writerow([f"{t:.9g}", f"{th:.12g}", f"{om:.12g}"])
