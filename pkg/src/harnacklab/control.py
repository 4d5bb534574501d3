"""Controls steering the linear flow ``x' = -Ax + Bf`` from 0 to a target.

Covers the input-to-state map ``L_T^B``, the diagonal controllability Gramian,
the minimal-energy control, the explicit T-robust control built from
``e^{-(T-t)A}x``, and the general ``u``/``h`` construction that produces
interpolating controls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .spectral import (
    DimensionError,
    DomainError,
    SpectralOperator,
    as_state,
    grid_count,
    phi_function,
)

DEFAULT_REFINEMENT = 12  # default grid: T * 2**-12


class SingularGramianError(ValueError):
    """Raised when a zero entry of B makes the Gramian singular."""


@dataclass(frozen=True, eq=False)
class ControlFunction:
    """Control sampled on the uniform grid ``start, start+step, ..., end``.

    ``exact`` (t -> f(t)) and ``response`` (t -> int_start^t e^{-(t-s)A} B f(s) ds)
    are optional closed forms attached by constructors that know them.
    """

    values: np.ndarray = field(repr=False)
    step: float
    start: float = 0.0
    exact: Callable[[float], np.ndarray] | None = field(default=None, repr=False)
    response: Callable[[float], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] < 2:
            raise DimensionError("control values must have shape (n+1, N) with n >= 1")
        if not np.all(np.isfinite(vals)):
            raise DomainError("control has non-finite values")
        if self.step <= 0:
            raise DomainError("step must be positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, fn, start: float, end: float, step: float, response=None):
        n = grid_count(end - start, step)
        t = start + step * np.arange(n + 1)
        vals = np.array([np.asarray(fn(ti), dtype=float) for ti in t])
        return cls(vals, step, start, exact=fn, response=response)

    @classmethod
    def zeros(cls, dim: int, start: float, end: float, step: float):
        n = grid_count(end - start, step)
        return cls(np.zeros((n + 1, dim)), step, start,
                   exact=lambda t: np.zeros(dim), response=lambda t: np.zeros(dim))

    @property
    def n_intervals(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def end(self) -> float:
        return self.start + self.step * self.n_intervals

    @property
    def duration(self) -> float:
        return self.step * self.n_intervals

    @property
    def times(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.n_intervals + 1)

    def at(self, t: float) -> np.ndarray:
        if t < self.start - 1e-12 or t > self.end + 1e-12:
            raise DomainError(f"t={t} outside [{self.start}, {self.end}]")
        if self.exact is not None:
            return np.asarray(self.exact(t), dtype=float)
        return _interp_nodes(self.values, (t - self.start) / self.step)

    def norm_sq(self, rule: str = "auto") -> float:
        """Squared L^2 norm over the grid interval.

        ``auto`` uses Romberg when the interval count is a power of two and
        Simpson otherwise.
        """
        sq = np.sum(self.values ** 2, axis=1)
        n = self.n_intervals
        if rule == "auto":
            rule = "romberg" if n & (n - 1) == 0 else "simpson"
        if rule == "romberg":
            return float(integrate.romb(sq, dx=self.step))
        if rule == "simpson":
            return float(integrate.simpson(sq, dx=self.step))
        if rule == "trapezoid":
            return float(integrate.trapezoid(sq, dx=self.step))
        raise ValueError(f"unknown rule {rule!r}")

    def scaled(self, c: float) -> "ControlFunction":
        ex = None if self.exact is None else (lambda t, f=self.exact: c * f(t))
        rs = None if self.response is None else (lambda t, f=self.response: c * f(t))
        return ControlFunction(c * self.values, self.step, self.start, ex, rs)


def _interp_nodes(values: np.ndarray, pos: float) -> np.ndarray:
    n = values.shape[0] - 1
    i = int(np.clip(np.floor(pos + 1e-9), 0, n))
    frac = pos - i
    if i >= n or abs(frac) < 1e-9:
        return values[min(i, n)].copy()
    return (1 - frac) * values[i] + frac * values[i + 1]


@dataclass(frozen=True)
class DiagonalGramian:
    entries: np.ndarray

    def __post_init__(self):
        r = np.array(self.entries, dtype=float)
        r.setflags(write=False)
        object.__setattr__(self, "entries", r)


def _diag_b(B, dim: int) -> np.ndarray:
    if B is None:
        return np.ones(dim)
    b = np.asarray(B, dtype=float)
    if b.ndim == 0:
        return np.full(dim, float(b))
    if b.shape != (dim,):
        raise DimensionError(f"B must have {dim} diagonal entries")
    return b


def _check_horizon(f: ControlFunction, T: float):
    if abs(f.duration - T) > 1e-9 * max(1.0, T):
        raise DomainError(f"control horizon {f.duration} does not match T={T}")


def _interval_integrals(lam: np.ndarray, values: np.ndarray, step: float) -> np.ndarray:
    """``int_0^h e^{-lam (h-s)} q_j(s) ds`` for each grid interval j.

    q_j is the quadratic through three neighbouring nodes (linear when only two
    nodes exist); the exponential kernel is integrated exactly, so stiff modes
    stay accurate.
    """
    n = values.shape[0] - 1
    z = lam * step
    if n == 1:
        nodes = np.array([0.0, 1.0])
    else:
        nodes = None
    mu = np.stack([phi_function(1, z), phi_function(2, z), 2.0 * phi_function(3, z)])

    def weights(pos):
        V = np.vander(pos, len(pos), increasing=True)
        a = np.linalg.inv(V).T  # a[i, m]: coefficient of u^m in Lagrange basis i
        return step * a @ mu[: len(pos)]

    if nodes is not None:
        w = weights(nodes)
        return (w[0] * values[0] + w[1] * values[1])[None, :]

    out = np.empty((n, values.shape[1]))
    wf = weights(np.array([0.0, 1.0, 2.0]))
    out[: n - 1] = wf[0] * values[:-2] + wf[1] * values[1:-1] + wf[2] * values[2:]
    wb = weights(np.array([-1.0, 0.0, 1.0]))
    out[n - 1] = wb[0] * values[n - 2] + wb[1] * values[n - 1] + wb[2] * values[n]
    return out


def duhamel_nodes(A: SpectralOperator, f: ControlFunction, B=None) -> np.ndarray:
    """Response ``int_start^t e^{-(t-s)A} B f(s) ds`` at every grid node of ``f``."""
    if f.dim != A.dim:
        raise DimensionError("control and operator dimensions differ")
    b = _diag_b(B, A.dim)
    I = _interval_integrals(A.eigenvalues, f.values, f.step) * b
    decay = np.exp(-A.eigenvalues * f.step)
    out = np.zeros((f.n_intervals + 1, A.dim))
    for j in range(f.n_intervals):
        out[j + 1] = decay * out[j] + I[j]
    return out


def apply_LT(A: SpectralOperator, B, T: float, f: ControlFunction,
             rule: str = "exponential") -> np.ndarray:
    """``L_T^B f = int_0^T e^{-(T-t)A} B f(t) dt`` by grid quadrature.

    ``rule="exponential"`` integrates the kernel exactly against a piecewise
    quadratic interpolant of ``f``; ``"trapezoid"`` is the plain composite rule.
    """
    _check_horizon(f, T)
    if f.dim != A.dim:
        raise DimensionError("control and operator dimensions differ")
    b = _diag_b(B, A.dim)
    lam = A.eigenvalues
    if rule == "trapezoid":
        t = f.times - f.start
        integrand = np.exp(-np.outer(T - t, lam)) * f.values
        return b * integrate.trapezoid(integrand, dx=f.step, axis=0)
    if rule != "exponential":
        raise ValueError(f"unknown rule {rule!r}")
    I = _interval_integrals(lam, f.values, f.step)
    k = np.arange(f.n_intervals - 1, -1, -1, dtype=float)
    return b * np.sum(np.exp(-np.outer(k, lam * f.step)) * I, axis=0)


def gramian(A: SpectralOperator, B, T: float) -> DiagonalGramian:
    """Closed form ``r_k = b_k^2 (1 - e^{-2 T lambda_k}) / (2 lambda_k)``."""
    if T <= 0:
        raise DomainError("T must be positive")
    b = _diag_b(B, A.dim)
    lam = A.eigenvalues
    return DiagonalGramian(b * b * -np.expm1(-2.0 * T * lam) / (2.0 * lam))


def _inverse_gramian(A, B, T) -> np.ndarray:
    r = gramian(A, B, T).entries
    if np.any(r <= 0):
        raise SingularGramianError("Gramian has a zero entry (degenerate B)")
    return 1.0 / r


def min_energy_norm_sq(A: SpectralOperator, B, T: float, x) -> float:
    """``|R_T^{-1/2} x|^2 = sum_k x_k^2 / r_k``, the least L^2 energy reaching x."""
    x = as_state(x, A.dim)
    return float(np.sum(x * x * _inverse_gramian(A, B, T)))


def min_energy_control(A: SpectralOperator, B, T: float, x,
                       step: float | None = None) -> ControlFunction:
    """``f*(t) = B e^{-(T-t)A} R_T^{-1} x`` on the grid."""
    x = as_state(x, A.dim)
    b = _diag_b(B, A.dim)
    coef = b * _inverse_gramian(A, B, T) * x
    lam = A.eigenvalues
    step = T * 2.0 ** -DEFAULT_REFINEMENT if step is None else step

    def exact(t):
        return coef * np.exp(-(T - t) * lam)

    def response(t):
        # int_0^t e^{-(t-s)lam} b^2 e^{-(T-s)lam} ds * x / r
        return b * coef * (np.exp(-(T - t) * lam) - np.exp(-(T + t) * lam)) / (2 * lam)

    return ControlFunction.from_function(exact, 0.0, T, step, response=response)


def lemma3_bound(A: SpectralOperator, B, T: float, x) -> float:
    """T-robust bound ``2 |B^{-1}|^2 (|x|^2/T + 2 |x|_{1/2}^2)``."""
    x = as_state(x, A.dim)
    b = _diag_b(B, A.dim)
    if np.any(b == 0):
        raise SingularGramianError("B is singular")
    binv = float(np.max(1.0 / np.abs(b)))
    return 2.0 * binv ** 2 * (float(x @ x) / T + float(np.sum(A.eigenvalues * x * x)))


def lemma3_control(A: SpectralOperator, B, T: float, x,
                   step: float | None = None) -> ControlFunction:
    """``f(t) = B^{-1}(e^{-(T-t)A}x/T + (2t/T) A e^{-(T-t)A} x)``; its response is
    ``(t/T) e^{-(T-t)A} x``."""
    x = as_state(x, A.dim)
    b = _diag_b(B, A.dim)
    if np.any(b == 0):
        raise SingularGramianError("B is singular")
    lam = A.eigenvalues
    step = T * 2.0 ** -DEFAULT_REFINEMENT if step is None else step

    def exact(t):
        decay = np.exp(-(T - t) * lam) * x
        return (decay / T + (2.0 * t / T) * lam * decay) / b

    def response(t):
        return (t / T) * np.exp(-(T - t) * lam) * x

    return ControlFunction.from_function(exact, 0.0, T, step, response=response)


def remark_control(A: SpectralOperator, T: float, x, u, h: ControlFunction | None = None,
                   du=None, step: float | None = None) -> ControlFunction:
    """Interpolating control from a weight ``u`` (u(0)=0, u(T)=1) and forcing ``h``.

    With ``phi1(t) = e^{-tA}x + int_0^t e^{-(t-s)A} h(s) ds`` the control is
    ``d/dt(u(t) phi1(T-t)) + u(t) A phi1(T-t)``.  ``u`` may be a callable or
    grid samples; ``du`` likewise, defaulting to second-order differences.
    """
    x = as_state(x, A.dim)
    if callable(u):
        if step is None:
            step = h.step if h is not None else T * 2.0 ** -DEFAULT_REFINEMENT
        n = grid_count(T, step)
        t = step * np.arange(n + 1)
        u_vals = np.array([float(u(ti)) for ti in t])
        if callable(du):
            du = np.array([float(du(ti)) for ti in t])
    else:
        u_vals = np.asarray(u, dtype=float)
        n = u_vals.size - 1
        step = T / n
        grid_count(T, step)
        t = step * np.arange(n + 1)
    if abs(u_vals[0]) > 1e-12 or abs(u_vals[-1] - 1.0) > 1e-12:
        raise DomainError("u must satisfy u(0)=0 and u(T)=1")
    du_vals = np.gradient(u_vals, step, edge_order=2) if du is None else np.asarray(du, float)

    lam = A.eigenvalues
    free = np.exp(-np.outer(t, lam)) * x
    if h is None:
        h_vals = np.zeros((n + 1, A.dim))
        forced = np.zeros_like(free)
    else:
        _check_horizon(h, T)
        if h.n_intervals != n:
            raise DimensionError("h must live on the same grid as u")
        h_vals = h.values
        forced = duhamel_nodes(A, h)
    phi1 = free + forced
    phi1_rev = phi1[::-1]          # phi1(T - t_i)
    h_rev = h_vals[::-1]           # h(T - t_i)
    vals = du_vals[:, None] * phi1_rev + u_vals[:, None] * (2.0 * lam * phi1_rev - h_rev)
    resp_nodes = u_vals[:, None] * phi1_rev

    def response(s):
        return _interp_nodes(resp_nodes, s / step)

    return ControlFunction(vals, step, 0.0, response=response)
