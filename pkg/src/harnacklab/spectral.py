"""Diagonal spectral model of a positive self-adjoint operator.

Vectors are coefficient arrays in the eigenbasis of ``A``.  Every function
here accepts a trailing mode axis, so batches of shape ``(..., N)`` are
handled without extra code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np


class DimensionError(ValueError):
    """Raised when a vector does not match the operator dimension."""


class DomainError(ValueError):
    """Raised when a scalar argument is outside its admissible range."""


@dataclass(frozen=True)
class SpectralOperator:
    """Diagonal operator with eigenvalues ``0 < lambda_1 <= ... <= lambda_N``."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        lam = np.array(self.eigenvalues, dtype=float).reshape(-1)
        if lam.size < 1:
            raise DimensionError("operator needs at least one mode")
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise DomainError("eigenvalues must be finite and strictly positive")
        if np.any(np.diff(lam) < 0):
            raise DomainError("eigenvalues must be nondecreasing")
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @classmethod
    def power_law(cls, n: int, beta: float = 1.0) -> "SpectralOperator":
        """``lambda_k = k^(2 beta)``; beta > 1 is the hyperdissipative regime."""
        if n < 1:
            raise DimensionError("n must be >= 1")
        if beta < 1:
            raise DomainError("beta must be >= 1")
        k = np.arange(1, n + 1, dtype=float)
        return cls(k ** (2.0 * beta))

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    @property
    def gap(self) -> float:
        """Smallest eigenvalue (the spectral gap lambda_0)."""
        return float(self.eigenvalues[0])

    def __hash__(self):
        return hash(self.eigenvalues.tobytes())

    def __eq__(self, other):
        return isinstance(other, SpectralOperator) and np.array_equal(
            self.eigenvalues, other.eigenvalues)


def as_state(x, dim: int | None = None) -> np.ndarray:
    """Convert to a float array with a trailing mode axis, checking finiteness."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if dim is not None and arr.shape[-1] != dim:
        raise DimensionError(f"expected {dim} modes, got {arr.shape[-1]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("state has non-finite entries")
    return arr


def semigroup_apply(A: SpectralOperator, t: float, x) -> np.ndarray:
    """Apply ``exp(-t A)`` mode by mode."""
    if t < 0:
        raise DomainError("semigroup time must be nonnegative")
    x = as_state(x, A.dim)
    if t == 0:
        return x.copy()
    return np.exp(-t * A.eigenvalues) * x


def frac_power_apply(A: SpectralOperator, s: float, x) -> np.ndarray:
    x = as_state(x, A.dim)
    return A.eigenvalues ** s * x


def half_norm_sq(A: SpectralOperator, x) -> np.ndarray | float:
    """Squared D_A(1/2,2) norm, ``int_0^inf |A e^{-tA} x|^2 dt = sum lambda_k x_k^2 / 2``."""
    x = as_state(x, A.dim)
    out = 0.5 * np.sum(A.eigenvalues * x * x, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def v_norm(A: SpectralOperator, x, theta: float = 1.0):
    """``|A^{theta/2} x|``; theta=1 is the V norm, theta=0 the H norm."""
    x = as_state(x, A.dim)
    out = np.sqrt(np.sum(A.eigenvalues ** theta * x * x, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def phi_function(k: int, z) -> np.ndarray:
    """Exponential-integrator function ``phi_k(-z) = int_0^1 e^{-z(1-u)} u^{k-1}/(k-1)! du``.

    Stable for all ``z >= 0``: a power series below 1, the closed form above.
    """
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1.0
    if np.any(small):
        zs = z[small]
        acc = np.zeros_like(zs)
        term = np.full_like(zs, 1.0 / factorial(k))
        for n in range(30):
            acc += term
            term = term * (-zs) / (n + k + 1)
        out[small] = acc
    if np.any(~small):
        zl = z[~small]
        # phi_k(w) = (e^w - sum_{j<k} w^j/j!) / w^k with w = -z
        w = -zl
        partial = np.zeros_like(w)
        for j in range(k):
            partial += w ** j / factorial(j)
        out[~small] = (np.exp(w) - partial) / w ** k
    return out


@dataclass(frozen=True)
class Segment:
    """Path slice on ``[-tau, 0]`` sampled at ``-tau, -tau+step, ..., 0``."""

    tau: float
    step: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.tau <= 0 or self.step <= 0:
            raise DomainError("tau and step must be positive")
        m = grid_count(self.tau, self.step)
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != m + 1:
            raise DimensionError(
                f"segment needs {m + 1} nodes of shape (N,), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("segment has non-finite entries")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, fn, tau: float, step: float) -> "Segment":
        m = grid_count(tau, step)
        s = -tau + step * np.arange(m + 1)
        return cls(tau, step, np.array([np.asarray(fn(si), dtype=float) for si in s]))

    @classmethod
    def constant(cls, v, tau: float, step: float) -> "Segment":
        v = as_state(v)
        m = grid_count(tau, step)
        return cls(tau, step, np.tile(v, (m + 1, 1)))

    @property
    def n_intervals(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return -self.tau + self.step * np.arange(self.n_intervals + 1)

    def at(self, s: float) -> np.ndarray:
        """Value at ``s`` in ``[-tau, 0]``, linear between nodes."""
        if s < -self.tau - 1e-12 or s > 1e-12:
            raise DomainError(f"s={s} outside [-tau, 0]")
        pos = (s + self.tau) / self.step
        i = int(np.clip(np.floor(pos + 1e-9), 0, self.n_intervals))
        frac = pos - i
        if abs(frac) < 1e-9 or i == self.n_intervals:
            return self.values[i].copy()
        return (1 - frac) * self.values[i] + frac * self.values[i + 1]

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))


def grid_count(length: float, step: float) -> int:
    """Number of grid intervals; raises unless ``step`` divides ``length``."""
    if step <= 0:
        raise DomainError("step must be positive")
    ratio = length / step
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise DomainError(f"step {step} does not divide {length}")
    return n
