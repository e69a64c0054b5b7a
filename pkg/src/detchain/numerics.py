"""Complex linear algebra helpers, ODE integration, and reproducible RNG streams.

The integrator is an embedded Dormand-Prince 4(5) pair with PI step-size
control, operating on complex state vectors.  A fixed-step RK4 is available
for reproducibility-critical runs.  Random numbers come from counter-based
Philox streams keyed by (master_seed, stream_index), so trajectory i always
sees stream i regardless of execution order or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "StiffnessError",
    "integrate_ode",
    "integrate_ode_fixed",
    "RngStream",
    "rng_split",
    "hermitize",
    "assert_hermitian",
]


class StiffnessError(RuntimeError):
    """Step size underflow: the derivative looks stiff or singular."""


def hermitize(m: np.ndarray) -> np.ndarray:
    """Symmetrize a matrix to exact Hermiticity; result satisfies M = M†."""
    return 0.5 * (m + m.conj().T)


def assert_hermitian(m: np.ndarray, tol: float = 1e-12) -> None:
    dev = np.max(np.abs(m - m.conj().T))
    if dev > tol:
        raise ValueError(f"matrix deviates from Hermiticity by {dev:.3e} > {tol:.1e}")


# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)

_MAX_STEPS = 2_000_000
_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
# PI controller exponents for a 5th-order error estimate.
_PI_ALPHA = 0.7 / 5.0
_PI_BETA = 0.4 / 5.0


def _error_norm(err: np.ndarray, y0: np.ndarray, y1: np.ndarray, tol: float) -> float:
    scale = tol + tol * np.maximum(np.abs(y0), np.abs(y1))
    return float(np.sqrt(np.mean(np.abs(err / scale) ** 2)))


def integrate_ode(
    state: np.ndarray,
    derivative: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    t1: float,
    tol: float = 1e-9,
    t_eval: Optional[Sequence[float]] = None,
):
    """Integrate dy/dt = derivative(t, y) from t0 to t1 with local error <= tol.

    Returns the final state, or an array of states sampled at ``t_eval``
    (each sample is hit exactly by shortening the step).  Raises
    :class:`StiffnessError` on step-size underflow.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    y = np.asarray(state, dtype=complex).copy()
    if t1 == t0:
        return y if t_eval is None else np.array([y] * len(t_eval))
    direction = 1.0 if t1 > t0 else -1.0

    targets = None
    if t_eval is not None:
        targets = np.asarray(t_eval, dtype=float)
        if np.any(direction * np.diff(targets) < 0):
            raise ValueError("t_eval must be monotone in the integration direction")
        out = np.empty((len(targets),) + y.shape, dtype=complex)
        next_target = 0
    t = float(t0)
    span = abs(t1 - t0)
    h = direction * min(span / 100.0, span)
    f0 = np.asarray(derivative(t, y), dtype=complex)
    if not np.all(np.isfinite(f0)):
        raise ValueError("derivative is not finite at t0")
    err_prev = 1.0
    k = np.empty((7,) + y.shape, dtype=complex)
    k[0] = f0

    for _ in range(_MAX_STEPS):
        if targets is not None and next_target < len(targets):
            stop = targets[next_target]
        else:
            stop = t1
        if direction * (t - stop) >= 0.0:
            if targets is not None and next_target < len(targets):
                out[next_target] = y
                next_target += 1
                continue
            break
        h = direction * min(abs(h), abs(stop - t))
        if abs(h) < 16 * np.finfo(float).eps * max(abs(t), abs(t1), 1e-30):
            raise StiffnessError(
                f"step size underflow at t={t:.6g}; derivative appears stiff or singular"
            )
        for i in range(1, 7):
            yi = y + h * np.tensordot(_DP_A[i], k[:i], axes=(0, 0))
            k[i] = derivative(t + _DP_C[i] * h, yi)
        y5 = y + h * np.tensordot(_DP_B5, k, axes=(0, 0))
        err = h * np.tensordot(_DP_B5 - _DP_B4, k, axes=(0, 0))
        err_norm = _error_norm(err, y, y5, tol)
        if err_norm <= 1.0 or abs(h) <= 32 * np.finfo(float).eps * max(abs(t), 1.0):
            t = t + h
            y = y5
            k[0] = k[6]  # FSAL
            factor = _SAFETY * max(err_norm, 1e-10) ** (-_PI_ALPHA) * err_prev ** (_PI_BETA)
            err_prev = max(err_norm, 1e-10)
        else:
            factor = _SAFETY * err_norm ** (-_PI_ALPHA)
        h = h * min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
    else:
        raise StiffnessError("integration did not converge within the step budget")

    while targets is not None and next_target < len(targets):
        out[next_target] = y
        next_target += 1
    return y if targets is None else out


def integrate_ode_fixed(
    state: np.ndarray,
    derivative: Callable[[float, np.ndarray], np.ndarray],
    t0: float,
    t1: float,
    n_steps: int,
) -> np.ndarray:
    """Classic fixed-step RK4; bitwise reproducible for a fixed step count."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    y = np.asarray(state, dtype=complex).copy()
    h = (t1 - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        k1 = derivative(t, y)
        k2 = derivative(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = derivative(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = derivative(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return y


@dataclass(frozen=True)
class RngStream:
    """Counter-based Philox stream; (master_seed, stream_index) fixes the sequence."""

    master_seed: int
    stream_index: int
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.stream_index < 0:
            raise ValueError("stream_index must be non-negative")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in an unsigned 64-bit integer")
        key = np.array([self.master_seed, self.stream_index], dtype=np.uint64)
        object.__setattr__(
            self, "_gen", np.random.Generator(np.random.Philox(key=key))
        )

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, size=None):
        return self._gen.random(size)

    def standard_normal(self, size=None):
        return self._gen.standard_normal(size)


def rng_split(master_seed: int, index: int) -> RngStream:
    """Deterministic independent stream ``index`` of the given master seed."""
    return RngStream(master_seed, index)
