"""Exponential-Euler coefficients and the trajectory record shared by both SDE layers.

One step of the scheme, per mode with ``z = lambda * step``::

    x_{n+1} = E x_n + K (drift_n + extra_n) + S sigma dW_n
    E = e^{-z},  K = (1 - e^{-z}) / lambda

The noise factor ``S`` depends on the convention: ``"endpoint"`` uses
``S = E`` (noise enters through ``e^{-A step} dW``); ``"exact"`` uses
``S = sqrt((1 - e^{-2z}) / (2z))`` so the per-step variance equals the exact
Ornstein-Uhlenbeck variance.  Shifting ``dW_n`` by ``h_n * step`` moves the
state by ``K * rho * sigma * h_n`` with ``rho = K / (S step)``; the coupling
and weight code uses ``rho`` so discrete measure changes are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import SpectralOperator

NOISE_CONVENTIONS = ("endpoint", "exact")


@dataclass(frozen=True)
class StepCoefficients:
    decay: np.ndarray
    drift: np.ndarray
    noise: np.ndarray
    rho: np.ndarray
    step: float


def step_coefficients(A: SpectralOperator, step: float, noise: str = "endpoint"):
    if noise not in NOISE_CONVENTIONS:
        raise ValueError(f"noise convention must be one of {NOISE_CONVENTIONS}")
    lam = A.eigenvalues
    z = lam * step
    decay = np.exp(-z)
    drift = -np.expm1(-z) / lam
    if noise == "endpoint":
        s = decay.copy()
    else:
        s = np.sqrt(-np.expm1(-2.0 * z) / (2.0 * z))
    return StepCoefficients(decay, drift, s, drift / (s * step), step)


def discrete_control(coef: StepCoefficients, nodes: np.ndarray) -> np.ndarray:
    """Per-step forcing ``g_n`` whose scheme response hits ``nodes`` exactly.

    Solves ``nodes[n+1] = E nodes[n] + K g_n`` for every step.
    """
    return (nodes[1:] - coef.decay * nodes[:-1]) / coef.drift


@dataclass
class PathRecord:
    """A batch of simulated trajectories.

    ``trajectory`` has shape ``(P, m + n + 1, N)``: the ``m + 1`` history nodes
    of the initial segment followed by the ``n`` new grid states.  ``dW`` holds
    the raw Brownian increments, shape ``(P, n, N)``.
    """

    step: float
    n_history: int
    trajectory: np.ndarray = field(repr=False)
    dW: np.ndarray = field(repr=False)
    seed: int | None = None
    first_path: int = 0
    girsanov_log: np.ndarray | None = field(default=None, repr=False)
    ibp_integral: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_paths(self) -> int:
        return self.trajectory.shape[0]

    @property
    def n_steps(self) -> int:
        return self.dW.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.n_steps + 1)

    @property
    def states(self) -> np.ndarray:
        return self.trajectory[:, self.n_history:]

    @property
    def final(self) -> np.ndarray:
        return self.trajectory[:, -1]

    def segment(self, n: int) -> np.ndarray:
        """Segment ``x_{t_n}`` for every path, shape ``(P, m + 1, N)``."""
        m = self.n_history
        return self.trajectory[:, n: n + m + 1]

    @property
    def final_segment(self) -> np.ndarray:
        return self.segment(self.n_steps)

    def csv_rows(self, path: int = 0):
        """Rows ``(time, x_1, ..., x_N)`` of one trajectory, history included."""
        m = self.n_history
        t = self.step * np.arange(-m, self.n_steps + 1)
        for ti, xi in zip(t, self.trajectory[path]):
            yield [float(ti), *map(float, xi)]

    def same_as(self, other: "PathRecord") -> bool:
        return (self.step == other.step and self.n_history == other.n_history
                and np.array_equal(self.trajectory, other.trajectory)
                and np.array_equal(self.dW, other.dW))


def check_finite(x: np.ndarray, n: int, first_path: int = 0):
    if not np.all(np.isfinite(x)):
        bad = int(np.argwhere(~np.isfinite(x).all(axis=-1))[0, 0])
        raise FloatingPointError(
            f"non-finite state at step {n} on path {first_path + bad}")
